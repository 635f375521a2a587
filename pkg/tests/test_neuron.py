import numpy as np
import pytest

from neurosoc.errors import ContractViolation
from neurosoc.services.neuron import (
    NeuronBank,
    NeuronParams,
    NeuronState,
    ResetMode,
    end_of_step,
    integrate,
)
from neurosoc.services.numerics import FixedPoint


class _ScalarLif:
    """Wide-integer evaluation of the membrane equation for one neuron."""

    def __init__(self, threshold, leak, refrac_len, v_rest=0, v_min=0, subtract=False):
        self.threshold = threshold
        self.leak = leak
        self.refrac_len = refrac_len
        self.v_rest = v_rest
        self.v_min = v_min
        self.subtract = subtract
        self.v = v_rest
        self.refrac = 0

    def step(self, inputs):
        if self.refrac == 0:
            self.v += sum(inputs)
        self.v = max(self.v - self.leak, self.v_min)
        if self.v >= self.threshold and self.refrac == 0:
            self.v = self.v - self.threshold if self.subtract else self.v_rest
            self.refrac = self.refrac_len
            return True
        self.refrac = max(self.refrac - 1, 0)
        return False


def _params(threshold=128, leak=0, refrac_len=0, reset_mode=ResetMode.TO_REST):
    fp = lambda raw: FixedPoint(raw, 7, 24)  # noqa: E731
    return NeuronParams(fp(threshold), fp(leak), fp(0), fp(0), refrac_len, reset_mode)


def test_integrate_examples():
    p = _params()
    s = NeuronState.initial(p)
    assert integrate(s, FixedPoint(50, 7, 8)).v.raw == 50
    for _ in range(3):
        s = integrate(s, FixedPoint(50, 7, 8))
    assert s.v.raw == 150


def test_integrate_is_gated_while_refractory():
    p = _params()
    s = NeuronState(FixedPoint(0, 7, 24), FixedPoint(0, 7, 24), refrac_cnt=3)
    assert integrate(s, FixedPoint(99, 7, 8)) == s


def test_fires_at_exact_threshold():
    p = _params(threshold=128)
    s = NeuronState(FixedPoint(128, 7, 24), FixedPoint(0, 7, 24))
    s, spike = end_of_step(s, p)
    assert spike and s.v.raw == 0 and s.fired


def test_leak_applied_before_compare():
    p = _params(threshold=128, leak=10)
    s, spike = end_of_step(NeuronState(FixedPoint(100, 7, 24), FixedPoint(0, 7, 24)), p)
    assert not spike and s.v.raw == 90
    s, spike = end_of_step(NeuronState(FixedPoint(135, 7, 24), FixedPoint(0, 7, 24)), p)
    assert not spike and s.v.raw == 125


def test_leak_floors_at_v_min():
    p = _params(leak=10)
    s, _ = end_of_step(NeuronState(FixedPoint(3, 7, 24), FixedPoint(0, 7, 24)), p)
    assert s.v.raw == 0


def test_if_quiescence():
    p = _params(leak=0)
    s = NeuronState.initial(p)
    for _ in range(100):
        s, spike = end_of_step(s, p)
        assert not spike and s.v.raw == 0


def test_theta_raises_the_threshold():
    p = _params(threshold=128)
    s = NeuronState(FixedPoint(130, 7, 24), FixedPoint(10, 7, 24))
    _, spike = end_of_step(s, p)
    assert not spike


def test_refractory_window_blocks_firing():
    p = _params(threshold=10, refrac_len=3)
    s = NeuronState.initial(p)
    fired = []
    for _ in range(12):
        s = integrate(s, FixedPoint(20, 7, 24))
        s, spike = end_of_step(s, p)
        fired.append(spike)
    assert fired == [True, False, False, False] * 3


def test_reset_by_subtraction_keeps_residue():
    p = _params(threshold=100, reset_mode=ResetMode.BY_SUBTRACTION)
    s = NeuronState(FixedPoint(130, 7, 24), FixedPoint(0, 7, 24))
    s, spike = end_of_step(s, p)
    assert spike and s.v.raw == 30


def test_params_are_validated():
    with pytest.raises(ContractViolation):
        _params(threshold=0)
    with pytest.raises(ContractViolation):
        _params(refrac_len=-1)
    with pytest.raises(ContractViolation):
        NeuronParams(FixedPoint(10, 7, 24), FixedPoint(0, 6, 24), FixedPoint(0, 7, 24), FixedPoint(0, 7, 24))


@pytest.mark.parametrize("subtract", [False, True])
def test_scalar_api_matches_wide_integer_oracle(rng, subtract):
    mode = ResetMode.BY_SUBTRACTION if subtract else ResetMode.TO_REST
    for _ in range(20):
        threshold = int(rng.integers(20, 400))
        leak = int(rng.integers(0, 8))
        refrac = int(rng.integers(0, 4))
        p = _params(threshold, leak, refrac, mode)
        oracle = _ScalarLif(threshold, leak, refrac, subtract=subtract)
        s = NeuronState.initial(p)
        for _ in range(200):
            inputs = [int(x) for x in rng.integers(-40, 80, size=rng.integers(0, 5))]
            for w in inputs:
                s = integrate(s, FixedPoint(w, 7, 24))
            s, spike = end_of_step(s, p)
            assert spike == oracle.step(inputs)
            assert s.v.raw == oracle.v


def _bank_trial(rng, n=64, steps=200):
    threshold = int(rng.integers(20, 400))
    leak = int(rng.integers(0, 8))
    refrac = int(rng.integers(0, 4))
    bank = NeuronBank.from_params(_params(threshold, leak, refrac), n)
    oracles = [_ScalarLif(threshold, leak, refrac) for _ in range(n)]
    drive = rng.integers(-30, 90, size=(steps, n))
    for t in range(steps):
        bank.integrate(drive[t])
        spikes = bank.end_of_step()
        expected = [o.step([int(drive[t, j])]) for j, o in enumerate(oracles)]
        assert spikes.tolist() == expected
    assert bank.v.tolist() == [o.v for o in oracles]


def test_bank_matches_scalar_oracle(rng):
    for _ in range(10):
        _bank_trial(rng)


@pytest.mark.slow
def test_bank_matches_oracle_thousand_trials(rng):
    for _ in range(1000):
        _bank_trial(rng, n=int(rng.integers(1, 65)), steps=int(rng.integers(1, 201)))


def test_bank_saturates_at_accumulator_width():
    bank = NeuronBank(shape=2, threshold=1 << 30, acc_bits=8)
    bank.integrate(np.array([100, -100]))
    bank.integrate(np.array([100, -100]))
    assert bank.v.tolist() == [127, -128]


def test_bank_state_snapshot():
    bank = NeuronBank.from_params(_params(threshold=10, refrac_len=2), 3)
    bank.integrate(np.array([0, 20, 5]))
    bank.end_of_step()
    s = bank.state(1)
    assert s.fired and s.refrac_cnt == 2 and s.v.raw == 0
    assert bank.state(2).v.raw == 5


def test_bank_integrate_many_saturates_after_every_input():
    bank = NeuronBank(shape=2, threshold=1 << 30, acc_bits=8)
    bank.integrate_many(np.array([[100, -100], [100, -100], [-100, 100]]))
    # 100 -> 127 (clamped) -> 27, not the wide sum 100
    assert bank.v.tolist() == [27, -28]
    wide = NeuronBank(shape=2, threshold=1 << 30, acc_bits=8)
    wide.integrate(np.array([[100, -100], [100, -100], [-100, 100]]).sum(axis=0))
    assert wide.v.tolist() == [100, -100]


def test_bank_integrate_many_matches_scalar_sequence(rng):
    params = _params(threshold=1 << 20)
    bank = NeuronBank.from_params(params, 16, acc_bits=10)
    states = [NeuronState.initial(params, total_bits=10) for _ in range(16)]
    for _ in range(20):
        rows = rng.integers(-300, 300, size=(int(rng.integers(0, 8)), 16))
        bank.integrate_many(rows)
        for row in rows:
            states = [integrate(s, FixedPoint(int(x), 7, 10)) for s, x in zip(states, row)]
    assert bank.v.tolist() == [s.v.raw for s in states]
