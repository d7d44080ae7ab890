import pytest

from dpus.config import ConfigError, ExperimentPlan, load_config, parse_config
from dpus.learners import TrainConfig
from dpus.sim import CorridorConfig


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text("")
    corridor, train, plan = load_config(p)
    assert corridor == CorridorConfig() and train == TrainConfig()
    assert plan.target_rates == (0.0, 0.1, 0.3, 0.5)
    assert plan.algorithms == ("dpus", "in_dqn", "cen_dqn", "co_dqn")


def test_values_parsed():
    corridor, train, plan = parse_config("""
[corridor]
n_intersections = 1
mainline_arrival_rate = 0.05
[train]
episodes = 12
hidden_sizes = 32, 16
learning_rate = 5e-4
[plan]
target_rates = 0.5
algorithms = dpus, in_dqn
seeds = 3, 4
overwrite = true
""")
    assert corridor.n_intersections == 1 and corridor.mainline_arrival_rate == 0.05
    assert train.episodes == 12 and train.hidden_sizes == (32, 16)
    assert train.learning_rate == 5e-4
    assert plan.target_rates == (0.5,) and plan.seeds == (3, 4) and plan.overwrite is True
    assert plan.train is train and plan.corridor is corridor


def test_green_bounds_name_both_keys():
    with pytest.raises(ConfigError) as err:
        parse_config("[corridor]\nmin_green = 70\nmax_green = 60\n")
    assert "min_green" in str(err.value) and "max_green" in str(err.value)


def test_typo_suggestion():
    with pytest.raises(ConfigError, match="did you mean 'learning_rate'"):
        parse_config("[train]\nlearnig_rate = 0.01\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match=r"\[train\]"):
        parse_config("[trian]\nepisodes = 1\n")


def test_parse_error_has_line_number():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[train]\nepisodes = 3\nthis is not a key value pair\n")


def test_bad_value_names_key():
    with pytest.raises(ConfigError, match="episodes"):
        parse_config("[train]\nepisodes = many\n")
    with pytest.raises(ConfigError, match="overwrite"):
        parse_config("[plan]\noverwrite = yes\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


@pytest.mark.parametrize("bad", [dict(algorithms=("ma2c",)), dict(seeds=()),
                                 dict(target_rates=(1.5,)),
                                 dict(target_rates=(0.1, 0.2), demand_multipliers=(1.0,))])
def test_plan_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentPlan(**bad)


def test_scenarios():
    assert ExperimentPlan(target_rates=(0.1,)).scenarios == [(0.1, None)]
    assert ExperimentPlan(target_rates=(0.1,), demand_multipliers=(2.0,)).scenarios == [(0.1, 2.0)]


def test_missing_section_header():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("episodes = 3\n")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="parse error"):
        parse_config("[train]\nepisodes = 3\nepisodes = 4\n")
