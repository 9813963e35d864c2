import math

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from cpt3 import atomic
from cpt3 import constants as const
from cpt3.lindblad import (
    AtomModel, DecayChannel, DetuningPencil, LaserField, ReducedScheme, SteadyStateError,
    ZeemanManifold, build_hamiltonian, build_liouvillian, dwell_average, evolve, fluorescence,
    kernel_dimension, population_observable, steady_state, thermal_state, unvec, vec,
)
from conftest import random_hermitian

TWO_PI = 2 * math.pi


def models():
    lw = (LaserField("B", -20e6, 8e6, 2e3), LaserField("R", -11e6, 2e6, 1e3),
          LaserField("C", -8e6, 4e5, 5e2))
    pol_r = {1: -1.0, -1: 1.0, 0: 0.3}
    lz = (lw[0], lw[1].replace(polarization=pol_r), lw[2])
    return [AtomModel(ReducedScheme(), lw), AtomModel(ZeemanManifold(), lz, B=1e-4)]


def test_vec_convention(rng):
    A, X, B = (rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(vec(A @ X @ B), np.kron(B.T, A) @ vec(X))
    assert np.array_equal(unvec(vec(X)), X)


@pytest.mark.parametrize("model", models(), ids=["4-level", "zeeman-14"])
def test_trace_and_hermiticity_preservation(model, rng):
    L = model.liouvillian()
    n = L.dim
    scale = np.abs(L.matrix).max()
    for _ in range(100):
        rho = random_hermitian(rng, n)
        out = L.apply(rho)
        assert abs(np.trace(out)) < 1e-12 * scale * np.abs(rho).max() * n
        assert np.abs(out - out.conj().T).max() < 1e-12 * scale * np.abs(rho).max() * n
    # identity is mapped to a traceless operator
    assert abs(np.trace(L.apply(np.eye(n) / n))) < 1e-12 * scale


@pytest.mark.parametrize("model", models(), ids=["4-level", "zeeman-14"])
def test_steady_state_is_a_density_matrix(model):
    L = model.liouvillian()
    rho = steady_state(L)
    assert np.allclose(rho, rho.conj().T, atol=1e-12)
    assert abs(np.trace(rho) - 1) < 1e-10
    assert np.linalg.eigvalsh(rho).min() > -1e-10
    assert np.linalg.norm(L.matrix @ vec(rho)) / np.abs(L.matrix).max() < 1e-10


def test_hamiltonian_bare_detunings():
    lasers = (LaserField("B", -3e6), LaserField("R", 2e6), LaserField("C", 5e6))
    H = build_hamiltonian(ReducedScheme(), lasers).matrix / TWO_PI
    assert np.allclose(H, np.diag([0.0, 3e6, 5e6, -5e6]))
    with pytest.raises(ValueError):
        build_hamiltonian(ReducedScheme(), lasers[:2])
    with pytest.raises(ValueError):
        LaserField("B", 0.0, -1.0)


def test_decay_branching():
    # H = 0, start in P1/2: populations end in S (1 - β) and D3/2 (β)
    sch = ReducedScheme()
    dec = sch.decay_channels(gamma_d32=0.0, gamma_d52=0.0)
    L = build_liouvillian(np.zeros((4, 4)), dec)
    rho0 = np.zeros((4, 4), complex)
    rho0[1, 1] = 1.0
    rho = evolve(rho0, L, 2e-7)
    assert rho[0, 0].real == pytest.approx(1 - const.BETA, abs=1e-8)
    assert rho[2, 2].real == pytest.approx(const.BETA, abs=1e-8)
    assert const.BETA == 0.064
    with pytest.raises(ValueError):
        DecayChannel(0, 1, -1.0)


def test_zeeman_decay_branching():
    man = ZeemanManifold()
    L = build_liouvillian(np.zeros((14, 14)), man.decay_channels(gamma_d32=0.0, gamma_d52=0.0))
    rho0 = np.zeros((14, 14), complex)
    rho0[man.index("P12", 0.5), man.index("P12", 0.5)] = 1.0
    rho = evolve(rho0, L, 2e-7)
    pop = np.diag(rho).real
    assert pop[man.indices("S12")].sum() == pytest.approx(1 - const.BETA, abs=1e-8)
    assert pop[man.indices("D32")].sum() == pytest.approx(const.BETA, abs=1e-8)


@pytest.mark.parametrize("delta, rabi", [(0.0, 5e6), (-12e6, 20e6), (30e6, 1e6)])
def test_two_level_oracle(delta, rabi):
    m = AtomModel(ReducedScheme(), (LaserField("B", delta, rabi), LaserField("R"), LaserField("C")), beta=0.0)
    rho = steady_state(m.liouvillian())
    O, D, G = TWO_PI * rabi, TWO_PI * delta, const.GAMMA_P
    expect = (O**2 / 4) / (D**2 + G**2 / 4 + O**2 / 2)
    assert rho[1, 1].real == pytest.approx(expect, rel=1e-9)


def test_lambda_against_dense_null_space():
    m = AtomModel(ReducedScheme(), (LaserField("B", -15e6, 10e6, 1e3), LaserField("R", -14.9e6, 3e6, 1e3),
                                    LaserField("C")))
    L = m.liouvillian()
    rho = steady_state(L)
    w, v = np.linalg.eig(L.matrix)
    k = np.argmin(np.abs(w))
    ref = unvec(v[:, k])
    ref = ref / np.trace(ref)
    assert np.abs(rho - ref).max() < 1e-9


def test_ideal_lambda_dark_state():
    # no dephasing, D3/2 stable: population ends in the Raman dark state
    ob, orr, d = 10e6, 3e6, -15e6
    sch = ReducedScheme()
    lasers = (LaserField("B", d, ob), LaserField("R", d, orr), LaserField("C"))
    dec = sch.decay_channels(gamma_d32=0.0)
    L = build_liouvillian(build_hamiltonian(sch, lasers), dec)
    rho = steady_state(L)
    dark = np.array([orr, 0.0, -ob, 0.0]) / math.hypot(ob, orr)
    assert (dark @ rho @ dark).real > 1 - 1e-9
    assert rho[1, 1].real < 1e-12


def test_b_only_pumps_into_d32():
    m = AtomModel(ReducedScheme(), (LaserField("B", 0, 10e6), LaserField("R"), LaserField("C")),
                  metastable_decay=False)
    L = m.liouvillian()
    # with the D states stable and no repumper the kernel is spanned by D3/2 and D5/2
    with pytest.raises(SteadyStateError):
        steady_state(L)
    m = AtomModel(ReducedScheme(), m.lasers)
    rho = steady_state(m.liouvillian())
    assert rho[2, 2].real > 0.999999
    assert fluorescence(rho, m.scheme, 1.0, 0.0) < 1e-6 * const.GAMMA_P


def test_degenerate_kernel_reported():
    lasers = (LaserField("B", -20e6, 8e6), LaserField("R", -11e6, 2e6), LaserField("C", -8e6, 4e5))
    m = AtomModel(ZeemanManifold(), lasers, B=1e-4, metastable_decay=False)
    assert kernel_dimension(m.liouvillian()) > 1
    with pytest.raises(SteadyStateError, match="kernel dimension"):
        steady_state(m.liouvillian())


def test_resonant_dark_line_contrast(lasers_4level):
    m = AtomModel(ReducedScheme(), lasers_4level)
    obs = population_observable(m.scheme, "P12")
    pen = DetuningPencil(m.with_detuning("R", 0.0).liouvillian().matrix, m.detuning_derivative("R"), obs)
    x0 = -20e6 + 8e6
    g = x0 + np.linspace(-200e3, 200e3, 4001)
    p = pen.evaluate(g)[0][0]
    assert p.min() < 0.1 * p[0]


def test_pencil_matches_dense_solve(lasers_4level):
    for m in (AtomModel(ReducedScheme(), lasers_4level), models()[1]):
        obs = np.vstack([population_observable(m.scheme, lv) for lv in ("P12", "D52")])
        pen = DetuningPencil(m.with_detuning("R", 0.0).liouvillian().matrix, m.detuning_derivative("R"), obs)
        ps = np.linspace(-15e6, -9e6, 7)
        vals, bad = pen.evaluate(ps)
        assert not bad.any()
        for k, p in enumerate(ps):
            rho = steady_state(m.with_detuning("R", p).liouvillian())
            assert vals[0, k] == pytest.approx(sum(rho[i, i].real for i in m.scheme.indices("P12")), abs=1e-12)
            assert vals[1, k] == pytest.approx(sum(rho[i, i].real for i in m.scheme.indices("D52")), abs=1e-12)


def test_field_derivative_is_exact():
    m = models()[1]
    dL = m.field_derivative()
    L1, L2 = m.liouvillian(B=1e-4).matrix, m.liouvillian(B=1.5e-4).matrix
    assert np.allclose(L2 - L1, 0.5e-4 * dL, atol=1e-6)


def test_evolve_basics():
    L = models()[0].liouvillian()
    rho0 = thermal_state(ReducedScheme())
    assert np.array_equal(evolve(rho0, L, 0.0), rho0)
    with pytest.raises(ValueError):
        evolve(rho0, L, -1.0)


def test_rabi_oscillation():
    sch = ReducedScheme()
    rabi = 1e6
    L = build_liouvillian(build_hamiltonian(sch, (LaserField("B", 0, rabi), LaserField("R"), LaserField("C"))))
    rho0 = np.zeros((4, 4), complex)
    rho0[0, 0] = 1
    for t in (0.1e-6, 0.37e-6, 0.8e-6):
        rho = evolve(rho0, L, t)
        assert rho[1, 1].real == pytest.approx(math.sin(TWO_PI * rabi * t / 2) ** 2, abs=1e-8)
        assert np.abs(rho - rho.conj().T).max() < 1e-8
        assert abs(np.trace(rho) - 1) < 1e-8


def test_evolve_reaches_steady_state():
    # slowed-down atom so that t >> every inverse rate stays cheap
    lasers = (LaserField("B", -2e3, 3e3, 50.0), LaserField("R", -1e3, 1e3, 50.0), LaserField("C", -1e3, 5e2))
    m = AtomModel(ReducedScheme(), lasers, gamma_p=2e4)
    sch = m.scheme
    dec = sch.decay_channels(2e4, const.BETA, 50.0, 50.0)
    from cpt3.lindblad import laser_dephasings
    L = build_liouvillian(build_hamiltonian(sch, lasers), dec, laser_dephasings(sch, lasers))
    rho = evolve(thermal_state(sch), L, 3.0, method="BDF", rtol=1e-10, atol=1e-13)
    assert np.abs(rho - steady_state(L)).max() < 1e-6
    avg, final = dwell_average(thermal_state(sch), L, 3.0)
    assert np.abs(final - rho).max() < 1e-6
    assert abs(np.trace(avg) - 1) < 1e-10


def test_fluorescence():
    sch = ReducedScheme()
    rho = thermal_state(sch)
    assert fluorescence(rho, sch, 0.01, 570e3) == 570e3
    rho = np.diag([0.5, 0.5, 0, 0]).astype(complex)
    assert fluorescence(rho, sch, 1e-3, 10.0) == pytest.approx((1 - const.BETA) * const.GAMMA_P / 2 * 1e-3 + 10.0)


def _center(f, x0, half=30e3, step=500.0):
    g = np.arange(x0 - half, x0 + half, step)
    v = np.array([f(x) for x in g])
    i = int(np.clip(np.argmin(v), 1, len(g) - 2))
    return minimize_scalar(f, bounds=(g[i - 1], g[i + 1]), method="bounded", options={"xatol": 1e-4}).x


@pytest.mark.parametrize("ln", atomic.relative_couplings(), ids=lambda ln: str(ln.m_thz))
def test_zeeman_loop_matches_reduced_model(ln):
    B = 1e-4
    man, red = ZeemanManifold(), ReducedScheme()
    lasers = (LaserField("B", -20e6, 8e6), LaserField("R", 0.0, 2e6, polarization={1: -1.0, -1: 1.0, 0: 1.0}),
              LaserField("C", -8e6, 4e5))
    dec = red.decay_channels()
    idx = [man.index(lv, m) for lv, m in (("S12", ln.mj_s12), ("P12", ln.mj_p12),
                                           ("D32", ln.mj_d32), ("D52", ln.mj_d52))]
    pairs = {"B": (0, 1), "R": (2, 1), "C": (0, 3)}

    def loop(dr):
        ls = [l.replace(detuning=dr) if l.label == "R" else l for l in lasers]
        H = build_hamiltonian(man, ls, B).matrix[np.ix_(idx, idx)]
        return steady_state(build_liouvillian(H, dec))[1, 1].real

    z = man.zeeman_hz_per_tesla()[idx] * B
    amp = {}
    for l in lasers:
        c = {(i, j): a for i, j, a in man.couplings(l)}
        a, b = pairs[l.label]
        amp[l.label] = abs(c[(idx[a], idx[b])])
    assert amp["C"] == pytest.approx(ln.rel_rabi_C, rel=1e-12)

    def reduced(dr):
        ls = (LaserField("B", -20e6 - z[1] + z[0], 8e6 * amp["B"]),
              LaserField("R", dr - z[1] + z[2], 2e6 * amp["R"]),
              LaserField("C", -8e6 - z[3] + z[0], 4e5 * amp["C"]))
        return steady_state(build_liouvillian(build_hamiltonian(red, ls), dec))[1, 1].real

    x0 = -12e6 + atomic.zeeman_shift(ln.m_thz, B)
    assert abs(_center(loop, x0) - _center(reduced, x0)) < 1.0


def test_doppler_slope():
    # weak, far-detuned drive: the light shifts barely depend on the Doppler-shifted
    # one-photon detunings (at 8 MHz / -20 MHz the slope drops to ~5.2 kHz/(m/s))
    lasers = (LaserField("B", -60e6, 4e6), LaserField("R", 0.0, 5e5), LaserField("C", -30e6, 2e5))
    sch = ReducedScheme()
    dec = sch.decay_channels()

    def pop(dr, v):
        ls = [l.replace(detuning=dr) if l.label == "R" else l for l in lasers]
        return steady_state(build_liouvillian(build_hamiltonian(sch, ls, velocity=v), dec))[1, 1].real

    c0 = _center(lambda x: pop(x, 0.0), -30e6, half=20e3, step=200.0)
    c1 = _center(lambda x: pop(x, 1.0), -30e6 + 6e3, half=20e3, step=200.0)
    k = sum(s / const.WAVELENGTH[x] for x, s in (("R", 1), ("C", 1), ("B", -1)))
    assert k == pytest.approx(const.FREQ_DD / const.C_LIGHT, rel=5e-3)
    assert (c1 - c0) == pytest.approx(k, rel=1e-2)
    assert (c1 - c0) == pytest.approx(6070.6, rel=1e-2)
