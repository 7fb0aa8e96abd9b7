import pytest

from est_engine.exceptions import ConfigError, StepRangeError
from est_engine.masks import SamplingRates
from est_engine.scheduler import SamplingScheduler, Stage, preset, validate

PRACTICAL_RATES = [(0.5, 0.5, 0.5), (0.5, 0.5, 1.0), (1.0, 1.0, 1.0)]


@pytest.fixture
def practical() -> SamplingScheduler:
    return SamplingScheduler.build([200, 700, 1500], PRACTICAL_RATES)


def test_rates_at__stage_boundaries(practical: SamplingScheduler):
    assert practical.rates_at(1).as_tuple() == (0.5, 0.5, 0.5)
    assert practical.rates_at(200).as_tuple() == (0.5, 0.5, 0.5)
    assert practical.rates_at(201).as_tuple() == (0.5, 0.5, 1.0)
    assert practical.rates_at(700).as_tuple() == (0.5, 0.5, 1.0)
    assert practical.rates_at(701).is_full
    assert practical.rates_at(1500).is_full


def test_stage_index(practical: SamplingScheduler):
    assert [practical.stage_index(s) for s in (1, 200, 201, 1500)] == [1, 1, 2, 3]


@pytest.mark.parametrize("step", [0, 1501])
def test_rates_at__out_of_range(practical: SamplingScheduler, step: int):
    with pytest.raises(StepRangeError) as ex:
        practical.rates_at(step)

    assert str(ex.value) == f"Step {step} is outside the scheduled range [1, 1500]"


def test_lengths(practical: SamplingScheduler):
    assert practical.total_steps == 1500
    assert practical.end_steps == (200, 700, 1500)
    assert practical.stage_lengths == (200, 500, 800)


def test_as_columns(practical: SamplingScheduler):
    assert practical.as_columns() == {
        "end_steps": [200, 700, 1500],
        "rates": PRACTICAL_RATES,
    }


def test_single_stage_shorthand():
    sched = SamplingScheduler.model_validate({"end_steps": 10, "rates": [1, 1, 1]})

    assert sched.end_steps == (10,)
    assert sched.stages[0].rates.is_full


def test_preset_shorthand():
    sched = SamplingScheduler.model_validate(
        {"preset": "practical-gpt2", "scale": 0.01}
    )

    assert sched.end_steps == (200, 700, 1500)


def test_build__not_increasing():
    with pytest.raises(ConfigError) as ex:
        SamplingScheduler.build([100, 100], [(1, 1, 1), (1, 1, 1)])

    assert "strictly increasing" in str(ex.value)


def test_build__rate_out_of_range():
    with pytest.raises(ConfigError) as ex:
        SamplingScheduler.build([100, 200], [(0.5, 1.5, 1), (1, 1, 1)])

    paths = [e.path for e in ex.value.field_errors]
    assert paths == ["scheduler.stages.0.rates.p_mlp"]


def test_build__length_mismatch():
    with pytest.raises(ConfigError):
        SamplingScheduler.build([100, 200], [(1, 1, 1)])


def test_parse__points_at_config_lines():
    values = {"end_steps": [100, 50], "rates": [[1, 1, 1], [1, 1, 1]]}

    with pytest.raises(ConfigError) as ex:
        SamplingScheduler.parse(
            values, lines={"scheduler.end_steps": 4, "scheduler.rates": 5}
        )

    assert ex.value.field_errors[0].line == 4


def test_validate__ok_returns_no_warnings(practical: SamplingScheduler):
    assert validate(practical, 1500) == []


def test_validate__wrong_total(practical: SamplingScheduler):
    with pytest.raises(ConfigError) as ex:
        validate(practical, 2000)

    assert [e.path for e in ex.value.field_errors] == ["scheduler.stages.2.end_step"]


def test_validate__unordered_stages_report_every_offender():
    full = SamplingRates(p_heads=1, p_mlp=1, p_layers=1)
    sched = SamplingScheduler.model_construct(
        stages=(
            Stage(end_step=10, rates=full),
            Stage(end_step=5, rates=full),
            Stage(end_step=5, rates=full),
        )
    )

    with pytest.raises(ConfigError) as ex:
        validate(sched, 5)

    assert [e.path for e in ex.value.field_errors] == [
        "scheduler.stages.1.end_step",
        "scheduler.stages.2.end_step",
    ]


def test_validate__sampled_final_stage_warns():
    sched = SamplingScheduler.build([100], [(0.5, 0.5, 1.0)])

    with pytest.warns(UserWarning, match="never trained"):
        warnings = validate(sched, 100)

    assert len(warnings) == 1


def test_preset__full_scale():
    sched = preset("practical-gpt2")

    assert sched.end_steps == (20000, 70000, 150000)
    assert [s.rates.as_tuple() for s in sched.stages] == PRACTICAL_RATES


def test_preset__scaled():
    sched = preset("practical-tinyllama", 0.0002)

    assert sched.end_steps == (2, 5, 12)


def test_preset__scale_rounds_half_up():
    sched = preset("practical-gpt2", 0.000025)

    # 0.5, 1.75 and 3.75
    assert sched.end_steps == (1, 2, 4)


def test_preset__scale_collision_is_bumped():
    with pytest.warns(UserWarning, match="raised to"):
        sched = preset("practical-gpt2", 0.00001)

    # 0.2 rounds to 0, 0.7 to 1 and 1.5 to 2; each is raised past the previous end step.
    assert sched.end_steps == (1, 2, 3)


@pytest.mark.parametrize("scale", [0.0, -1.0, float("inf")])
def test_preset__invalid_scale(scale: float):
    with pytest.raises(ConfigError):
        preset("practical-gpt2", scale)


def test_preset__unknown():
    with pytest.raises(ConfigError) as ex:
        preset("nope")

    assert 'Preset "nope" not found' in str(ex.value)
