import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffuserptycho.exceptions import NumericalFailure
from diffuserptycho.fields import ComplexField
from diffuserptycho.propagation import propagate
from diffuserptycho.refocus import FocusScan, Refocuser, autofocus, refocus, sharpness
from diffuserptycho.simulate import ObjectSpec, make_test_object

from .oracles import rms

PITCH, WL = 1.67 / 3, 0.532


def _target(kind="line_pairs", n=128, **kw):
    return make_test_object(ObjectSpec(kind=kind, **kw), n, n, PITCH, WL)


def test_sharpness_definitions(rng):
    a = rng.random((10, 10)) + 0.5
    assert sharpness(a) == pytest.approx(a.var() / a.mean() ** 2)
    assert sharpness(a, "tamura") == pytest.approx(np.sqrt(a.std() / a.mean()))
    assert sharpness(3 * a) == pytest.approx(sharpness(a))
    assert sharpness(np.zeros((4, 4))) == 0.0
    with pytest.raises(ValueError):
        sharpness(a, "brenner")


def test_refocus_zero_and_round_trip(rng):
    f = _target("siemens_star")
    assert np.allclose(refocus(f, 0.0).data, f.data, atol=1e-14)
    back = refocus(refocus(f, 45.0), -45.0)
    assert rms(back.data - f.data) < 1e-8
    assert np.array_equal(refocus(f, 20.0).data, propagate(f, 20.0).data)


@pytest.mark.parametrize("kind", ["normalized_variance", "tamura"])
def test_in_focus_target(kind):
    scan = autofocus(_target(linewidth_px=3), -50, 50, 21, kind)
    assert abs(scan.best_z_um) <= scan.step_um


@pytest.mark.parametrize("defocus", [30.0, -20.0])
def test_injected_defocus_is_found(defocus):
    # sample sits `defocus` further from the diffuser than nominal
    blurred = propagate(_target(linewidth_px=3), defocus)
    scan = autofocus(blurred, -60, 60, 25)
    assert scan.best_z_um == pytest.approx(-defocus, abs=scan.step_um)


def test_two_layer_gives_two_maxima():
    obj = _target("two_layer", n=192, layer_separation_um=60.0)
    scan = autofocus(obj, -100, 40, 29)
    top = sorted(scan.local_maxima(2))
    assert top[0] == pytest.approx(-60, abs=scan.step_um)
    assert top[1] == pytest.approx(0, abs=scan.step_um)


@settings(max_examples=10, deadline=None)
@given(st.floats(-np.pi, np.pi))
def test_global_phase_invariance(theta):
    obj = _target(n=64, linewidth_px=2)
    a = autofocus(obj, -30, 30, 7)
    b = autofocus(obj.with_data(obj.data * np.exp(1j * theta)), -30, 30, 7)
    assert a.best_z_um == b.best_z_um
    assert np.allclose(a.metric_values, b.metric_values, rtol=1e-9)


def test_autofocus_parallel_roi_and_planes():
    obj = _target(n=64, linewidth_px=2)
    a = autofocus(obj, -30, 30, 7)
    b = autofocus(obj, -30, 30, 7, n_jobs=3, keep_planes=True)
    assert a.metric_values == b.metric_values
    assert len(b.planes) == 7 and isinstance(b.planes[0.0], ComplexField)
    roi = (slice(10, 40), slice(10, 40))
    c = autofocus(obj, -30, 30, 7, roi=roi)
    assert c.metric_values[3] == pytest.approx(sharpness(np.abs(obj.data)[roi]))


def test_autofocus_errors():
    obj = _target(n=32)
    with pytest.raises(ValueError):
        autofocus(obj, 10, 10, 5)
    with pytest.raises(ValueError):
        autofocus(obj, 0, 10, 2)
    with pytest.raises(ValueError):
        autofocus(obj, 0, 10, 5, "entropy")
    with pytest.raises(NumericalFailure):
        huge = np.zeros((32, 32), complex)
        huge[::2] = 1e200  # variance overflows
        autofocus(obj.with_data(huge), 0, 10, 5)


def test_focus_scan_json_and_invariants():
    scan = FocusScan([-1.0, 0.0, 1.0], [0.1, 0.5, 0.2], 0.0)
    d = json.loads(scan.to_json())
    assert d["local_maxima_um"] == [0.0]
    again = FocusScan.from_dict(d)
    assert again == scan and again.step_um == 1.0
    with pytest.raises(ValueError):
        FocusScan([0.0, 1.0], [0.1], 0.0)
    with pytest.raises(ValueError):
        FocusScan([1.0, 0.0], [0.1, 0.2], 0.0)
    with pytest.raises(ValueError):
        FocusScan([0.0, 1.0], [0.1, 0.2], 0.5)


def test_local_maxima_ordering_and_plateau():
    scan = FocusScan([0.0, 1, 2, 3, 4, 5, 6, 7], [5, 1, 3, 1, 2, 2, 2, 0], 0.0)
    assert scan.local_maxima() == [2.0, 5.0]
    assert scan.local_maxima(1) == [2.0]
    rising = FocusScan([0.0, 1, 2, 3], [1, 2, 2, 3], 0.0)
    assert rising.local_maxima() == []


def test_refocuser_estimator():
    from sklearn.base import clone

    blurred = propagate(_target(linewidth_px=3), 25.0)
    est = Refocuser(z_min=-50, z_max=50, n_steps=21)
    assert clone(est).get_params()["n_steps"] == 21
    sharp = est.fit(blurred).transform(blurred)
    assert est.best_z_um_ == pytest.approx(-25, abs=5)
    assert sharpness(np.abs(sharp.data)) > sharpness(np.abs(blurred.data))
