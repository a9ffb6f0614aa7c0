import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mapunetr.errors import ConfigError, ContractError
from mapunetr.nn import BatchNorm2d, Linear, Parameter, count_params
from mapunetr.optim import ScheduleConfig, lr_at, sgd_step


def with_grad(value, grad):
    p = Parameter(np.array([value]))
    p.grad = np.array([grad])
    return p


class TestSGD:
    def test_plain_step(self):
        p = with_grad(1.0, 0.5)
        sgd_step([p], lr=0.1, momentum=0.0)
        assert p.data[0] == pytest.approx(0.95)

    def test_zero_grad_no_change(self):
        p = with_grad(1.0, 0.0)
        sgd_step([p], lr=0.1)
        assert p.data[0] == 1.0

    def test_momentum_two_steps(self):
        p = with_grad(1.0, 1.0)
        sgd_step([p], lr=0.1, momentum=0.9)
        assert p.data[0] == pytest.approx(0.9)
        sgd_step([p], lr=0.1, momentum=0.9)
        assert p.data[0] == pytest.approx(0.71)

    def test_missing_grad(self):
        with pytest.raises(ContractError):
            sgd_step([Parameter([1.0])], lr=0.1)

    def test_skips_non_trainable(self):
        frozen = Parameter([1.0], trainable=False)
        sgd_step([frozen], lr=1.0)
        assert frozen.data[0] == 1.0

    def test_zero_lr_bitwise(self, tiny_model, rng):
        params = tiny_model.parameters()
        for p in params:
            p.grad = rng.normal(size=p.shape)
        before = [p.data.copy() for p in params]
        sgd_step(params, lr=0.0, momentum=0.5)
        assert all(np.array_equal(b, p.data) for b, p in zip(before, params))


class TestSchedule:
    def test_library_defaults(self):
        s = ScheduleConfig()
        assert (s.lr0, s.gamma, s.step_epochs, s.batch_size, s.epochs, s.momentum) == (0.01, 0.1, 20, 8, 70, 0.0)

    @pytest.mark.parametrize("epoch,expected", [(0, 0.01), (19, 0.01), (20, 0.001), (45, 0.0001)])
    def test_values(self, epoch, expected):
        assert lr_at(epoch, ScheduleConfig()) == expected

    @given(st.floats(1e-6, 1.0), st.floats(0.01, 1.0), st.integers(1, 50), st.integers(0, 300))
    def test_non_increasing(self, lr0, gamma, step, epoch):
        s = ScheduleConfig(lr0=lr0, gamma=gamma, step_epochs=step)
        assert lr_at(epoch + 1, s) <= lr_at(epoch, s)
        if (epoch + 1) % step:
            assert lr_at(epoch + 1, s) == lr_at(epoch, s)

    @pytest.mark.parametrize("kwargs", [dict(lr0=0), dict(gamma=0), dict(gamma=1.5), dict(step_epochs=0),
                                        dict(momentum=1.0), dict(batch_size=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ScheduleConfig(**kwargs)


class TestCountParams:
    def test_empty(self):
        assert count_params([]) == (0, 0, 0)

    def test_linear(self):
        layer = Linear(2 * 2 * 1, 4, np.random.default_rng(0))
        assert count_params(layer.parameters()) == (20, 20, 0)

    def test_batch_norm(self):
        assert count_params(BatchNorm2d(8).parameters()) == (32, 16, 16)

    def test_model_total_is_sum(self, tiny_model):
        total, trainable, frozen = count_params(tiny_model.parameters())
        assert total == trainable + frozen
        bn_channels = sum(p.size for n, p in tiny_model.named_parameters() if n.endswith("running_mean"))
        assert frozen == 2 * bn_channels

    def test_names_unique(self, tiny_model):
        names = [n for n, _ in tiny_model.named_parameters()]
        assert len(names) == len(set(names))
