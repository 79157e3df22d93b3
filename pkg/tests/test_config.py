"""Config parser tests: line-number errors, typed getters, builders."""

import pytest

from slideseg import config as cf
from slideseg.network import NetworkConfig


class TestParse:
    def test_basic_assignments(self):
        cfg = cf.parse_config("a = 1\nb=two\n  c  =  3.5  \n")
        assert cfg.get("a") == "1"
        assert cfg.get("b") == "two"
        assert cfg.get("c") == "3.5"

    def test_comments_and_blanks_skipped(self):
        cfg = cf.parse_config("# header\n\nlr = 0.1  # inline note\n   \n# done\n")
        assert cfg.values == {"lr": "0.1"}
        assert cfg.line_of("lr") == 3

    def test_missing_equals_reports_line(self):
        with pytest.raises(cf.ConfigError) as err:
            cf.parse_config("a = 1\nnot an assignment\n")
        assert err.value.line == 2
        assert "line 2" in str(err.value)

    def test_empty_key_and_value(self):
        with pytest.raises(cf.ConfigError) as err:
            cf.parse_config("= 5\n")
        assert err.value.line == 1
        with pytest.raises(cf.ConfigError) as err:
            cf.parse_config("a = 1\nb =\n")
        assert err.value.line == 2

    def test_duplicate_key_reports_both_lines(self):
        with pytest.raises(cf.ConfigError) as err:
            cf.parse_config("a = 1\n\na = 2\n")
        assert err.value.line == 3
        assert "line 1" in str(err.value)

    def test_unknown_key_points_at_its_line(self):
        cfg = cf.parse_config("lr = 0.1\nlimo = stretch\n")
        with pytest.raises(cf.ConfigError) as err:
            cfg.check_known({"lr"})
        assert err.value.line == 2

    def test_value_may_contain_equals(self):
        cfg = cf.parse_config("expr = a=b\n")
        assert cfg.get("expr") == "a=b"


class TestTypedGetters:
    def test_int_float_bool(self):
        cfg = cf.parse_config("n = 7\nx = 2.5\nflag = off\n")
        assert cfg.get_int("n") == 7
        assert cfg.get_float("x") == 2.5
        assert cfg.get_bool("flag") is False
        assert cfg.get_int("absent", 9) == 9

    @pytest.mark.parametrize("text,getter", [
        ("n = seven\n", "get_int"),
        ("x = fast\n", "get_float"),
        ("flag = maybe\n", "get_bool"),
    ])
    def test_bad_values_carry_line(self, text, getter):
        cfg = cf.parse_config(text)
        with pytest.raises(cf.ConfigError) as err:
            getattr(cfg, getter)(text.split(" ")[0])
        assert err.value.line == 1

    def test_bool_spellings(self):
        cfg = cf.parse_config("a = on\nb = TRUE\nc = Yes\nd = 1\ne = no\n")
        assert all(cfg.get_bool(k) for k in "abcd")
        assert cfg.get_bool("e") is False


class TestBuilders:
    def test_network_defaults(self):
        net = cf.network_config_from(cf.parse_config("input_size = 64\n"))
        assert net == NetworkConfig(input_size=(64, 64), depth=3, width=8)

    def test_network_full(self):
        text = (
            "input_size = 32\ndepth = 2\nwidth = 4\nskips = 1/1\n"
            "block = shortcut\nattention = se\nfusion = adaptive\nn_scales = 2\n"
        )
        net = cf.network_config_from(cf.parse_config(text))
        assert net.skip_set == ("1/1",)
        assert net.block_kind == "shortcut" and net.fusion == "adaptive"

    def test_rectangular_size(self):
        net = cf.network_config_from(cf.parse_config("input_size = 64x32\ndepth = 2\n"))
        assert net.input_size == (64, 32)

    def test_bad_size_reports_line(self):
        cfg = cf.parse_config("depth = 2\ninput_size = big\n")
        with pytest.raises(cf.ConfigError) as err:
            cf.network_config_from(cfg)
        assert err.value.line == 2

    def test_invalid_network_combination(self):
        with pytest.raises(cf.ConfigError):
            cf.network_config_from(cf.parse_config("input_size = 50\ndepth = 3\n"))

    def test_train_defaults(self):
        tc = cf.train_config_from(cf.parse_config("seed = 5\n"))
        assert tc.lr == 1e-4 and tc.beta1 == 0.5 and tc.beta2 == 0.999
        assert tc.epochs == 100 and tc.decay_epochs == 10 and tc.seed == 5
        assert tc.loss.terms == ("ce",)
        assert tc.augment.p == 0.5

    def test_train_loss_and_augment(self):
        tc = cf.train_config_from(cf.parse_config("loss = ce+ssim+iou\naugment = off\n"))
        assert set(tc.loss.terms) == {"ce", "ssim", "iou"}
        assert tc.augment.p == 0.0

    def test_bad_loss_reports_line(self):
        cfg = cf.parse_config("epochs = 30\nloss = ce+focal\n")
        with pytest.raises(cf.ConfigError) as err:
            cf.train_config_from(cfg)
        assert err.value.line == 2

    def test_invalid_train_combination(self):
        with pytest.raises(cf.ConfigError):
            cf.train_config_from(cf.parse_config("epochs = 5\n"))  # decay window 10 > 5
