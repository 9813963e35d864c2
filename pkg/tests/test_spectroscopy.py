import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from cpt3 import analysis as an
from cpt3 import atomic
from cpt3 import constants as const
from cpt3 import spectroscopy as sp
from cpt3.lindblad import DetuningPencil, LaserField, population_observable

NARROW = (LaserField("B", -20e6, 4e6), LaserField("R", 0.0, 0.42e6), LaserField("C", -8e6, 2e5))
WEAK14 = (LaserField("B", -40e6, 4e6), LaserField("R", 0.0, 0.2e6, polarization={1: -1.0, -1: 1.0, 0: 0.3}),
          LaserField("C", -20e6, 0.2e6))


def narrow_cfg(**kw):
    kw = {"lasers": NARROW, "start": -12.06e6, "stop": -11.94e6, "step": 500.0, **kw}
    return sp.ScanConfig(**kw)


def test_config_validation():
    with pytest.raises(ValueError):
        narrow_cfg(step=0.0)
    with pytest.raises(ValueError):
        narrow_cfg(stop=-12.06e6)
    with pytest.raises(ValueError):
        narrow_cfg(integration_time=0.0)
    with pytest.raises(ValueError):
        narrow_cfg(model="6-level")
    with pytest.raises(ValueError):
        narrow_cfg(doppler_max_order=512)
    cfg = narrow_cfg()
    assert sp.ScanConfig.from_dict(cfg.to_dict()) == cfg


def test_gauss_hermite_moments():
    x, w = sp.gauss_hermite_normal(16, 3.0)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    assert w @ x**2 == pytest.approx(9.0, rel=1e-12)
    assert w @ x**4 == pytest.approx(3 * 81.0, rel=1e-12)
    with pytest.raises(ValueError):
        sp.doppler_average(lambda s: s, 1e-3, 1e5, order=2)


def test_averages_reduce_to_identity():
    f = lambda s: np.cos(np.asarray(s) * 1e-4) + 2.0
    r = sp.doppler_average(f, 0.0, 1e5)
    assert r.value == f(0.0) and r.order == 1
    r = sp.doppler_average(f, 1e-2, 0.0)
    assert r.value == f(0.0)
    g = lambda B: np.asarray(B) * 3.0
    assert sp.field_noise_average(g, 1e-4, 0.0).value == g(1e-4)
    with pytest.raises(ValueError):
        sp.field_noise_average(g, 1e-4, -1.0)


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=25)
def test_averages_are_linear(a, b):
    f = lambda s: 1.0 / (1.0 + (np.asarray(s) / 5e3) ** 2)
    g = lambda s: np.exp(-np.asarray(s) / 4e4)
    h = lambda s: a * f(s) + b * g(s)
    kw = dict(T=10e-3, k_eff=2 * math.pi / 165e-6, order=32, max_order=32)
    lhs = sp.doppler_average(h, **kw).value
    rhs = a * sp.doppler_average(f, **kw).value + b * sp.doppler_average(g, **kw).value
    assert lhs == pytest.approx(rhs, abs=1e-13)
    kw = dict(B_mean=1e-4, pkpk=6e-7, order=8, max_order=8)
    lhs = sp.field_noise_average(h, **kw).value
    rhs = a * sp.field_noise_average(f, **kw).value + b * sp.field_noise_average(g, **kw).value
    assert lhs == pytest.approx(rhs, abs=1e-13)


def test_field_noise_against_dense_oracle():
    # narrow line at the Zeeman position of m; uniform 6 mG pk-pk field noise
    pk, B0, fwhm = 6e-7, 1e-4, 5e3
    for m in (atomic.m_thz(-1.5, 2.5), atomic.m_thz(1.5, 1.5), -atomic.m_thz(1.5, 1.5)):
        slope = float(m) * const.MU_B_HZ_PER_T
        x = np.linspace(-60e3, 60e3, 2401) + slope * B0
        line = lambda B: 1 - 1 / (1 + ((x[None, :] - slope * np.asarray(B)[:, None]) / (fwhm / 2)) ** 2)
        avg = sp.field_noise_average(line, B0, pk, order=4, max_order=64)
        assert avg.converged
        Bs = B0 + np.linspace(-pk / 2, pk / 2, 10001)
        dense = line(Bs).mean(axis=0)
        assert np.abs(avg.value - dense).max() < 2e-3
        depth = 1 - avg.value
        above = x[depth > depth.max() / 2]
        width = above[-1] - above[0]
        # flat-top width set by the Zeeman slope: |m|·μ_B·pk
        box = abs(slope) * pk
        assert width == pytest.approx(math.sqrt(box**2 + fwhm**2), rel=0.1)
    assert abs(float(atomic.m_thz(-1.5, 2.5)) * const.MU_B_HZ_PER_T * pk - 35.3e3) < 0.2e3
    assert abs(float(atomic.m_thz(1.5, 1.5)) * const.MU_B_HZ_PER_T * pk - 5.04e3) < 0.05e3


def test_phase_matched_doppler_null():
    dB, dR, dC = atomic.phase_matched_directions()
    lasers = tuple(l.replace(direction=tuple(d)) for l, d in zip(NARROW, (dB, dR, dC)))
    cold = sp.scan(narrow_cfg(lasers=lasers))
    hot = sp.scan(narrow_cfg(lasers=lasers, temperature=10e-3))
    assert np.max(np.abs(hot.rate - cold.rate) / cold.rate) < 1e-10


def _dense_doppler(cfg, n=10_000):
    """Brute-force velocity integration of the T = 0 spectrum."""
    m = cfg.atom_model()
    pen = DetuningPencil(m.with_detuning("R", 0.0).liouvillian().matrix, m.detuning_derivative("R"),
                         population_observable(m.scheme, "P12"))
    sig = atomic.velocity_sigma(cfg.temperature)
    v = np.linspace(-6 * sig, 6 * sig, n)
    w = np.exp(-0.5 * (v / sig) ** 2)
    w /= w.sum()
    shift = cfg.k_eff() * v / (2 * math.pi)
    g = cfg.grid()
    out = np.zeros(g.size)
    for k in range(0, n, 500):
        p = (g[None, :] + shift[k:k + 500, None]).ravel()
        out += w[k:k + 500] @ pen.evaluate(p)[0][0].reshape(-1, g.size)
    return out * cfg.signal_scale() + cfg.background


def _fwhm(spec):
    res = an.fit_spectrum(spec, min_depth_sigma=5)
    fits = [f for _, f in res if f is not None]
    assert len(fits) == 1
    return fits[0]


def test_copropagating_doppler_broadening():
    cold_cfg = narrow_cfg(start=-12.15e6, stop=-11.85e6)
    hot_cfg = dataclasses.replace(cold_cfg, temperature=10e-3)
    cold, hot = sp.scan(cold_cfg), sp.scan(hot_cfg)
    assert hot.diagnostics["doppler_sigma_Hz"] * 2 * math.sqrt(2 * math.log(2)) == pytest.approx(20.6e3, abs=0.1e3)
    oracle = sp.Spectrum(hot.detuning, _dense_doppler(hot_cfg), hot.sigma, hot.config)
    # a 5 kHz line under a 20 kHz Gaussian is hard for Gauss-Hermite: points that
    # miss the 1e-4 doubling test at the maximum order are counted, and stay close
    assert hot.diagnostics["unconverged_doppler"] < len(hot) // 4
    assert np.max(np.abs(hot.rate - oracle.rate) / oracle.rate) < 5e-3
    w0, w1, wo = _fwhm(cold).fwhm, _fwhm(hot).fwhm, _fwhm(oracle).fwhm
    assert 4e3 < w0 < 6e3
    assert w1 > w0
    assert w1 == pytest.approx(wo, rel=0.05)
    # Voigt width of a w0 Lorentzian and a 20.6 kHz Gaussian
    voigt = 0.5346 * w0 + math.sqrt(0.2166 * w0**2 + 20.6e3**2)
    assert w1 == pytest.approx(voigt, rel=0.15)


def test_full_mode_keeps_line_position():
    cfg = narrow_cfg(start=-12.03e6, stop=-11.97e6, step=1e3, temperature=1e-3, doppler_order=16,
                     doppler_max_order=64)
    eff = sp.scan(cfg)
    full = sp.scan(dataclasses.replace(cfg, doppler_mode="full"))
    cold = sp.scan(dataclasses.replace(cfg, temperature=0.0, doppler_mode="full"))
    assert np.array_equal(cold.rate, sp.scan(dataclasses.replace(cfg, temperature=0.0)).rate)
    # one-photon Doppler shifts move the bright background by a few per cent, not the dark line
    assert np.max(np.abs(full.rate - eff.rate) / eff.rate) < 0.1
    fe, ff = _fwhm(eff), _fwhm(full)
    assert abs(fe.center - ff.center) < 500.0
    assert ff.fwhm == pytest.approx(fe.fwhm, rel=0.1)


def test_point_independence():
    cfg = narrow_cfg()
    m = cfg.atom_model()
    pen = DetuningPencil(m.with_detuning("R", 0.0).liouvillian().matrix, m.detuning_derivative("R"),
                         population_observable(m.scheme, "P12"))
    g = cfg.grid()
    perm = np.random.default_rng(3).permutation(g.size)
    a = pen.evaluate(g)[0][0]
    b = pen.evaluate(g[perm])[0][0]
    assert np.max(np.abs(a[perm] - b)) < 1e-12 * np.abs(a).max()
    full = sp.scan(cfg)
    part = sp.scan(dataclasses.replace(cfg, start=cfg.start + 40 * cfg.step))
    assert np.max(np.abs(full.rate[40:] - part.rate) / part.rate) < 1e-12


def test_thread_count_does_not_change_output():
    cfg = sp.ScanConfig(WEAK14, -9.78e6, -9.74e6, 1e3, model="zeeman-14", B_mean=1e-4,
                        B_noise_short=6e-7, B_noise_long=4e-8, repeats=3, shot_noise=True, seed=7)
    a, b = sp.scan(cfg, threads=1), sp.scan(cfg, threads=4)
    assert np.array_equal(a.rate, b.rate) and np.array_equal(a.sigma, b.sigma)
    assert a.diagnostics == b.diagnostics


def test_long_term_offsets():
    cfg = narrow_cfg(B_noise_long=4e-8, repeats=4, seed=11)
    off = sp.long_term_offsets(cfg)
    assert off.shape == (4,) and np.all(np.abs(off) <= 2e-8)
    assert np.array_equal(off, sp.long_term_offsets(cfg))
    assert not np.array_equal(off, sp.long_term_offsets(dataclasses.replace(cfg, seed=12)))
    assert np.all(sp.long_term_offsets(narrow_cfg(repeats=3)) == 0)


def test_weak_drive_dips_at_predicted_positions():
    base = sp.ScanConfig(WEAK14, 0.0, 1.0, 1.0, model="zeeman-14", B_mean=1e-4)
    pred = sp.predicted_line_positions(base)
    assert len(pred) == 12
    step = 500.0
    for m, x in pred.items():
        s = sp.scan(dataclasses.replace(base, start=x - 20 * step, stop=x + 20 * step, step=step))
        i = int(np.argmin(s.rate))
        assert 0 < i < len(s) - 1, m
        assert abs(s.detuning[i] - x) <= step, m


def test_c_laser_produces_dark_lines():
    lasers = tuple(l.replace(linewidth=200.0) for l in WEAK14)
    on_cfg = sp.ScanConfig(lasers, -26.2e6, -13.8e6, 500.0, model="zeeman-14", B_mean=1e-4)
    off_cfg = dataclasses.replace(on_cfg, lasers=tuple(l.replace(rabi=0.0) if l.label == "C" else l
                                                       for l in lasers))
    on, off = sp.scan(on_cfg), sp.scan(off_cfg)
    pred = sp.predicted_line_positions(on_cfg)
    assert on.rate.mean() < off.rate.mean()  # shelving in D5/2
    narrow_on = [f for _, f in an.fit_spectrum(on) if f is not None and f.fwhm < 100e3]
    narrow_off = [f for _, f in an.fit_spectrum(off) if f is not None and f.fwhm < 100e3]
    assert narrow_off == []
    # the σ-loop lines; the π-loop ones are too weak at this polarisation
    for m in (atomic.m_thz(-1.5, 2.5), atomic.m_thz(0.5, 2.5), atomic.m_thz(-0.5, 1.5), atomic.m_thz(1.5, 1.5)):
        for s in (1, -1):
            assert min(abs(f.center - pred[s * m]) for f in narrow_on) < 1e3


def test_shot_noise_snr_identity():
    # 4000 counts/ms baseline, 25 % dip, 1 ms per point
    cfg = {"integration_time": 1e-3, "repeats": 1}
    rate = np.array([4e6, 3e6])
    spec = sp.Spectrum([0.0, 1.0], rate, np.zeros(2), cfg)
    noisy = sp.add_shot_noise(spec, 5)
    assert noisy.sigma[0] == pytest.approx(math.sqrt(4000) / 1e-3)
    snr = (rate[0] - rate[1]) / noisy.sigma[0]
    assert snr == pytest.approx(15.8, abs=0.1)
    assert abs(snr - 16) <= 1
    big = sp.Spectrum(np.arange(20000.0), np.full(20000, 4e6), np.zeros(20000), cfg)
    draws = sp.add_shot_noise(big, 9).rate
    assert np.std(draws) == pytest.approx(math.sqrt(4000) / 1e-3, rel=0.02)


def test_shot_noise_determinism_and_errors():
    spec = sp.scan(narrow_cfg(ion_count=10, detection_efficiency=1e-3, background=1e5))
    a, b = sp.add_shot_noise(spec, 3), sp.add_shot_noise(spec, 3)
    assert np.array_equal(a.rate, b.rate)
    assert not np.array_equal(a.rate, sp.add_shot_noise(spec, 4).rate)
    bad = sp.Spectrum([0.0, 1.0], [1.0, 1.0], [0.0, 0.0], {"integration_time": 0.0})
    with pytest.raises(ValueError):
        sp.add_shot_noise(bad, 1)


def test_spectrum_invariants():
    with pytest.raises(ValueError):
        sp.Spectrum([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], {})
    s = sp.scan(narrow_cfg(ion_count=1, detection_efficiency=1e-3, shot_noise=True, seed=2))
    assert np.all(s.rate >= 0)
    assert s.flagged == []


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 30), elements=finite, unique=True), st.data())
def test_csv_round_trip_bit_exact(tmp_path_factory, x, data):
    x = np.sort(x)
    n = x.size
    y = data.draw(hnp.arrays(np.float64, n, elements=finite))
    s = data.draw(hnp.arrays(np.float64, n, elements=st.floats(0, 1e12)))
    cfg = narrow_cfg().to_dict()
    spec = sp.Spectrum(x, y, s, cfg, {"note": "x"}, [0])
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    spec.save(path)
    back = sp.Spectrum.load(path)
    assert back.detuning.tobytes() == spec.detuning.tobytes()
    assert back.rate.tobytes() == spec.rate.tobytes()
    assert back.sigma.tobytes() == spec.sigma.tobytes()
    assert back.config == cfg and back.digest == spec.digest and back.flagged == [0]


def test_transient_mode_approaches_steady_state():
    cfg = narrow_cfg(start=-12.02e6, stop=-11.98e6, step=2e3)
    ss = sp.scan(cfg)
    tr = sp.scan(dataclasses.replace(cfg, transient=True, integration_time=0.15))
    # the first point starts from the thermal state; later points lag slightly
    # behind the steady state near the dip, where D-state pumping is slow
    assert np.max(np.abs(tr.rate[5:] - ss.rate[5:])) < 0.02 * ss.rate.max()
    assert abs(tr.rate[0] - ss.rate[0]) > abs(tr.rate[-1] - ss.rate[-1])
