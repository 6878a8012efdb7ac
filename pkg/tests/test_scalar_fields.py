import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phast import autodiff as ad
from phast.autodiff import ParamStore, Tensor
from phast.envs import env_rhs, get_env
from phast.errors import ContractViolation
from phast.factory import analytic_mass, build_model
from phast.hamiltonian import (
    KNOWN,
    PARTIAL,
    UNKNOWN,
    HamiltonianModel,
    hamiltonian_value,
    passivity_certificate,
    ph_vector_field,
    port_output,
)
from phast.linalg import ConstantDiagLowRank, DampingField
from phast.nn import Featurizer
from phast.potentials import (
    Cosine,
    GravityN,
    HeatExchange,
    Hybrid,
    LennardJones,
    NeuralMLP,
    Quadratic,
    RLC,
    Zero,
    potential_gradient,
    potential_value,
)
from phast.rng import stream

from conftest import random_field


def simple_model(potential, n, d0=0.0, mass=None, damping=None):
    mass = mass or ConstantDiagLowRank(np.ones(n))
    damping = damping or DampingField(n, d0)
    return HamiltonianModel(potential, mass, damping, KNOWN)


STRUCTURED = [
    Cosine([9.81, 2.0]),
    Quadratic(np.array([[2.0, 0.5], [0.5, 1.0]])),
    LennardJones(3, 2, 1.0, 1.0, 0.1),
    GravityN((1.0, 2.0, 0.5), 2, 1.0, 0.1),
    RLC(2.0),
    HeatExchange(1.0, 2.0, 0.5),
]


class TestPotentialValue:
    def test_cosine(self):
        V = Cosine([9.81])
        assert float(potential_value(V, [0.0]).value) == 0.0
        assert float(potential_value(V, [np.pi]).value) == pytest.approx(2 * 9.81, abs=1e-14)

    def test_quadratic(self):
        assert float(potential_value(Quadratic(np.eye(2)), [1.0, 1.0]).value) == pytest.approx(1.0)

    def test_lennard_jones_minimum(self):
        r = 2.0 ** (1 / 6)
        V = LennardJones(2, 1, eps=1.3, sigma=1.0, soft=0.0)
        assert float(potential_value(V, [0.0, r]).value) == pytest.approx(-1.3, abs=1e-12)
        # the minimum: nearby separations have higher energy
        for dr in (-1e-3, 1e-3):
            assert float(potential_value(V, [0.0, r + dr]).value) > -1.3

    def test_coincident_without_softening(self):
        with pytest.raises(ContractViolation):
            potential_value(LennardJones(2, 1, soft=0.0), [0.5, 0.5])

    def test_heat_includes_coupling(self):
        V = HeatExchange(1.0, 1.0, 0.5)
        assert float(potential_value(V, [1.0, 0.0]).value) == pytest.approx(0.5 + 0.25)

    def test_dimension_check(self):
        with pytest.raises(ContractViolation):
            potential_value(Cosine([1.0]), [0.0, 1.0])


class TestPotentialGradient:
    def test_quadratic(self):
        np.testing.assert_allclose(potential_gradient(Quadratic(np.eye(2)), [2.0, -3.0]).value, [2.0, -3.0])

    def test_cosine(self):
        np.testing.assert_allclose(potential_gradient(Cosine([1.0]), [np.pi / 2]).value, [1.0], atol=1e-15)

    def test_gravity_matches_fd(self):
        V = GravityN((1.0, 1.0), 2, 1.0, 0.1)
        q = np.array([0.3, -0.2, 1.1, 0.4])
        g = potential_gradient(V, q).value
        h = 1e-5
        fd = np.array([(float(V.value(Tensor(q + h * e)).value) - float(V.value(Tensor(q - h * e)).value)) / (2 * h)
                       for e in np.eye(4)])
        np.testing.assert_allclose(g, fd, atol=1e-7)

    @pytest.mark.parametrize("V", STRUCTURED, ids=lambda v: type(v).__name__)
    def test_closed_form_matches_autodiff(self, V):
        rng = np.random.default_rng(0)
        if isinstance(V, LennardJones):
            base = np.array([0.0, 0.0, 1.12, 0.0, 0.56, 0.97])
            q = base + rng.normal(scale=0.1, size=(100, 6))
        else:
            q = rng.normal(scale=1.5, size=(100, V.n))
        closed = V.gradient(Tensor(q)).value
        auto = V.autodiff_gradient(Tensor(q)).value
        assert np.abs(closed - auto).max() <= 1e-10 * max(1.0, np.abs(closed).max())

    def test_neural_routes_through_autodiff(self):
        params = ParamStore()
        V = NeuralMLP(params, "V", Featurizer([True, False]), stream(0), hidden=8)
        q = np.array([[0.3, -1.0]])
        np.testing.assert_array_equal(V.gradient(Tensor(q)).value, V.autodiff_gradient(Tensor(q)).value)

    def test_zero(self):
        np.testing.assert_array_equal(potential_gradient(Zero(3), np.ones(3)).value, np.zeros(3))


class TestHybrid:
    def test_scale_initialized_small(self):
        params = ParamStore()
        res = NeuralMLP(params, "V.residual", Featurizer([True]), stream(0))
        rho = params.add("V.rho", np.array(-3.0))
        V = Hybrid(Cosine([9.81]), res, rho)
        assert float(V.scale.value) <= 0.05

    def test_gradient_combines_parts(self):
        params = ParamStore()
        res = NeuralMLP(params, "V.residual", Featurizer([True]), stream(1), hidden=8)
        rho = params.add("V.rho", np.array(-1.0))
        V = Hybrid(Cosine([2.0]), res, rho)
        q = Tensor(np.array([[0.4], [2.0]]))
        np.testing.assert_allclose(V.gradient(q).value, V.autodiff_gradient(q).value, atol=1e-12)


class TestHamiltonianValue:
    def test_free_particle(self):
        assert float(hamiltonian_value(simple_model(Zero(2), 2), [0.0, 0.0], [2.0, 0.0]).value) == 2.0

    def test_pendulum_rest(self):
        assert float(hamiltonian_value(simple_model(Cosine([9.81]), 1), [0.0], [0.0]).value) == 0.0

    def test_rlc(self):
        assert float(hamiltonian_value(simple_model(RLC(1.0), 1), [1.0], [1.0]).value) == pytest.approx(1.0)


class TestVectorField:
    def test_free_particle(self):
        qd, pd = ph_vector_field(simple_model(Zero(2), 2), [0.0, 1.0], [0.5, -1.0])
        np.testing.assert_array_equal(qd.value, [0.5, -1.0])
        np.testing.assert_array_equal(pd.value, [0.0, 0.0])

    def test_pendulum_equilibrium(self):
        qd, pd = ph_vector_field(simple_model(Cosine([9.81]), 1, d0=0.3), [0.0], [0.0])
        assert qd.value[0] == 0.0 and pd.value[0] == 0.0

    def test_windy_pendulum_force(self):
        # at theta = pi/2 the windy damping is d0 + delta_d = 0.8
        _, pd = ph_vector_field(simple_model(Cosine([9.81]), 1, d0=0.8), [np.pi / 2], [1.0])
        assert pd.value[0] == pytest.approx(-10.61, abs=1e-12)
        x = env_rhs(get_env("pendulum_windy"), np.array([np.pi / 2, 1.0]))
        assert x[1] == pytest.approx(-10.61, abs=1e-12)

    def test_forcing_enters_momentum_rows(self):
        G = np.array([[0.0], [1.0]])
        _, pd = ph_vector_field(simple_model(Zero(1), 1), [0.0], [0.0], u=np.array([2.5]), G_port=G)
        assert pd.value[0] == 2.5

    def test_forcing_requires_port(self):
        with pytest.raises(ContractViolation):
            ph_vector_field(simple_model(Zero(1), 1), [0.0], [0.0], u=np.array([1.0]))

    def test_analytic_mass_matches_simulator(self):
        env = get_env("cartpole_windy", d0=0.0, delta_d=0.0)
        model = HamiltonianModel(Cosine([0.0, 9.81]), analytic_mass(env), DampingField(2), KNOWN, core="midpoint")
        rng = np.random.default_rng(3)
        for _ in range(5):
            q, p = rng.normal(size=2), rng.normal(size=2)
            qd, pd = ph_vector_field(model, q, p)
            ref = env_rhs(env, np.concatenate([q, p]))
            np.testing.assert_allclose(np.concatenate([qd.value, pd.value]), ref, atol=1e-12)


class TestPortOutput:
    def test_selects_momentum_row(self):
        G = np.array([[0.0], [0.0], [1.0], [0.0]])
        y = port_output(simple_model(Zero(2), 2), [0.3, 0.1], [0.7, -2.0], G)
        assert y.value[0] == 0.7

    def test_zero_momentum(self):
        G = np.array([[0.0], [1.0]])
        assert port_output(simple_model(Cosine([9.81]), 1), [1.0], [0.0], G).value[0] == 0.0

    def test_pendulum_velocity(self):
        G = np.array([[0.0], [1.0]])
        assert port_output(simple_model(Cosine([9.81]), 1), [0.2], [0.5], G).value[0] == pytest.approx(0.5)

    def test_shape_check(self):
        with pytest.raises(ContractViolation):
            port_output(simple_model(Zero(1), 1), [0.0], [0.0], np.ones((3, 1)))


class TestPassivityCertificate:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 4), rank=st.integers(0, 3))
    def test_nonpositive(self, seed, n, rank):
        rng = np.random.default_rng(seed)
        field = random_field(n, rank, seed, d0=0.1) if rank else DampingField(n, 0.1)
        d = rng.uniform(0.3, 2.0, n)
        U = rng.normal(size=(n, 1))
        model = HamiltonianModel(Quadratic(np.eye(n)), ConstantDiagLowRank(d, U), field, UNKNOWN)
        q, p = rng.normal(size=(30, n)), rng.normal(size=(30, n))
        cert = passivity_certificate(model, q, p)
        v = model.velocity(q, p).value
        expected = -np.einsum("bi,bij,bj->b", v, field.matrix(q).value, v)
        assert cert.max() <= 1e-12
        np.testing.assert_allclose(cert, expected, atol=1e-10)


class TestRegimeFlags:
    @pytest.mark.parametrize("regime", [KNOWN, PARTIAL, UNKNOWN])
    def test_trainable_groups(self, regime):
        model, _, _ = build_model(get_env("pendulum_windy"), regime)
        names = model.params.trainable_names()
        groups = {n.split(".")[0] for n in names}
        if regime == KNOWN:
            assert not any(n.startswith(("V.", "M.")) for n in names)
            assert "D" in groups
        elif regime == PARTIAL:
            assert "V" in groups and not any(n.startswith("M.") for n in names)
        else:
            assert {"V", "M", "D"} <= groups

    def test_partial_hybrid_scale_small(self):
        model, _, _ = build_model(get_env("pendulum_windy"), PARTIAL)
        assert float(model.potential.scale.value) <= 0.05
