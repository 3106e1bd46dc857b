import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qotl.io import FormatError
from qotl.linalg import ket, proj
from qotl.predicates import ivp_add, ivp_infinity, ivp_new, ivp_trace
from qotl.linalg import Subspace
from qotl.qwhile import (
    BUILTIN_UNITARIES,
    Abort,
    EnvError,
    Environment,
    FixpointError,
    IfMeas,
    Init,
    ParseError,
    Seq,
    Skip,
    Superoperator,
    Unitary,
    WhileMeas,
    apply,
    apply_local,
    denote,
    dual,
    dual_apply_ivp,
    is_ast,
    is_cp,
    loop_fixpoint,
    parse,
    unroll,
    variables,
)

from randomgen import qubit_env, rand_channel, rand_density, rand_herm, rand_ivp, rand_program, rand_psd

seeds = st.integers(min_value=0, max_value=2**31 - 1)
X = np.array([[0, 1], [1, 0]], dtype=complex)
ENV = qubit_env(("q", "r"))


def trace_identity_gap(e, a, b):
    return abs(np.trace(a @ apply(e, b)) - np.trace(apply(dual(e), a) @ b))


class TestParse:
    def test_skip(self):
        assert parse("skip", ENV) == Skip()

    def test_two_statements(self):
        assert parse("q := |0>; [q] *= U(X)", ENV) == Seq(Init("q"), Unitary(("q",), "X"))

    def test_while(self):
        p = parse("while M(m01)[q] == 1 do { [q] *= U(X) } od", ENV)
        assert p == WhileMeas(("q",), "m01", Unitary(("q",), "X"))

    def test_if_and_round_trip(self):
        src = "if M(comp)[q] { 0 -> { skip } 1 -> { [q, r] *= U(CNOT) } }; abort"
        p = parse(src, ENV)
        assert isinstance(p, Seq)
        assert isinstance(p.first, IfMeas)
        assert p.second == Abort()
        assert parse(p.to_source(), ENV) == p
        assert variables(p) == ["q", "r"]

    @pytest.mark.parametrize(
        "src",
        [
            "[z] *= U(X)",
            "[q] *= U(NOPE)",
            "if M(m01)[q] { 0 -> { skip } }",
            "while M(comp3)[q] == 1 do { skip } od",
            "skip skip",
            "q := |1>",
            "[q] *= U(CNOT)",
        ],
    )
    def test_errors(self, src):
        with pytest.raises(ParseError):
            parse(src, ENV)

    def test_error_location(self):
        with pytest.raises(ParseError) as exc:
            parse("skip;\n  [q] *= U(NOPE)", ENV)
        assert exc.value.line == 2
        assert exc.value.col > 1


class TestEnvironment:
    def test_builtins(self):
        for name in ("X", "Y", "Z", "H", "CNOT", "SWAP"):
            u = BUILTIN_UNITARIES[name]
            np.testing.assert_allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-12)

    def test_rejects_non_unitary(self):
        with pytest.raises(EnvError):
            Environment({"q": 2}, {"B": np.array([[1, 1], [0, 1]])})

    def test_rejects_incomplete_measurement(self):
        with pytest.raises(EnvError):
            Environment({"q": 2}, {}, {"m": [np.diag([1, 0])]})

    def test_json_round_trip(self):
        env = Environment({"q": 2}, {"S": np.diag([1, 1j])}, {"m": [np.diag([1, 0]), np.diag([0, 1])]})
        again = Environment.from_json(env.to_json())
        np.testing.assert_allclose(again.unitary("S"), np.diag([1, 1j]))
        with pytest.raises(FormatError):
            Environment.from_json({"vars": {"q": 2}, "unitaries": {"B": [[1, 1], [0, 1]]}})


class TestDenote:
    def test_skip_is_identity(self):
        np.testing.assert_allclose(denote(Skip(), ENV, ["q"]).transfer, np.eye(4))

    def test_init_resets(self):
        e = denote(Init("q"), ENV)
        for k in range(2):
            np.testing.assert_allclose(apply(e, proj(ket(k, 2))), proj(ket(0, 2)), atol=1e-15)

    def test_loop_example(self):
        loop = parse("while M(m01)[q] == 1 do { [q] *= U(X) } od", ENV)
        e = denote(loop, ENV)
        np.testing.assert_allclose(apply(e, proj(ket(1, 2))), proj(ket(0, 2)), atol=1e-12)
        np.testing.assert_allclose(apply(e, proj(ket(0, 2))), proj(ket(0, 2)), atol=1e-12)
        # hand unrolling: while^(2) = E0 + E0 o X o E1 already equals the limit
        np.testing.assert_allclose(unroll(loop, ENV, 2).transfer, e.transfer, atol=1e-12)

    def test_loop_steps(self):
        e0 = Superoperator.from_kraus([proj(ket(0, 2))])
        e1 = Superoperator.from_kraus([proj(ket(1, 2))])
        w, k = loop_fixpoint(e0, e1, Superoperator.unitary(X))
        assert k <= 3
        reset = denote(Init("q"), ENV)
        np.testing.assert_allclose(w.transfer, reset.transfer, atol=1e-12)

    def test_fixpoint_error(self):
        loop = WhileMeas(("q",), "m01", Unitary(("q",), "H"))
        with pytest.raises(FixpointError) as exc:
            denote(loop, ENV, max_iter=3)
        assert exc.value.status == "max_iter"
        assert exc.value.residual > 0

    def test_if_matches_kraus_sum(self):
        p = parse("if M(m01)[q] { 0 -> { [q] *= U(H) } 1 -> { q := |0> } }", ENV)
        e = denote(p, ENV)
        rho = rand_density(2, np.random.default_rng(0))
        h = BUILTIN_UNITARIES["H"]
        p0, p1 = proj(ket(0, 2)), proj(ket(1, 2))
        want = h @ p0 @ rho @ p0 @ h + np.trace(p1 @ rho) * p0
        np.testing.assert_allclose(apply(e, rho), want, atol=1e-12)

    def test_extra_variables_act_trivially(self):
        e = denote(Unitary(("r",), "X"), ENV, ["q", "r"])
        np.testing.assert_allclose(apply(e, proj(ket(0, 4))), proj(ket(1, 4)), atol=1e-15)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_composition_homomorphism(self, seed):
        rng = np.random.default_rng(seed)
        a = rand_program(rng, ("q", "r"), 3)
        b = rand_program(rng, ("q", "r"), 3)
        space = ["q", "r"]
        ea, eb = denote(a, ENV, space), denote(b, ENV, space)
        eab = denote(Seq(a, b), ENV, space)
        np.testing.assert_allclose(eab.transfer, eb.transfer @ ea.transfer, atol=1e-9)
        rho = rand_density(4, rng)
        np.testing.assert_allclose(apply(eab, rho), apply(eb, apply(ea, rho)), atol=1e-9)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_cp_and_trace_nonincreasing(self, seed):
        rng = np.random.default_rng(seed)
        e = denote(rand_program(rng, ("q", "r"), 4), ENV, ["q", "r"])
        assert is_cp(e)
        rho = rand_density(4, rng)
        assert np.real(np.trace(apply(e, rho))) <= 1 + 1e-8
        np.testing.assert_allclose(apply(e, rho), apply(e, rho).conj().T, atol=1e-9)

    def test_loop_unrolling_monotone(self):
        loop = WhileMeas(("q",), "m01", Unitary(("q",), "H"))
        rho = rand_density(2, np.random.default_rng(4))
        traces = [np.real(np.trace(apply(unroll(loop, ENV, k), rho))) for k in range(8)]
        assert np.all(np.diff(traces) >= -1e-12)
        assert traces[-1] <= 1 + 1e-12


class TestApplyDual:
    def test_identity(self):
        rho = rand_density(3, np.random.default_rng(1))
        np.testing.assert_allclose(apply(Superoperator.identity(3), rho), rho)
        np.testing.assert_allclose(dual(Superoperator.identity(3)).transfer, np.eye(9))

    def test_x_gate(self):
        e = denote(Unitary(("q",), "X"), ENV)
        np.testing.assert_allclose(apply(e, proj(ket(0, 2))), proj(ket(1, 2)), atol=1e-15)

    def test_dual_of_unitary(self):
        u = BUILTIN_UNITARIES["H"] @ np.diag([1, 1j])
        a = rand_herm(2, np.random.default_rng(2))
        np.testing.assert_allclose(apply(dual(Superoperator.unitary(u)), a), u.conj().T @ a @ u, atol=1e-12)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_trace_identity(self, seed):
        rng = np.random.default_rng(seed)
        e = rand_channel(3, rng, dout=2)
        assert trace_identity_gap(e, rand_herm(2, rng), rand_herm(3, rng)) <= 1e-8

    def test_kraus_round_trip(self):
        e = rand_channel(3, np.random.default_rng(3), nkraus=2)
        np.testing.assert_allclose(Superoperator.from_kraus(e.kraus()).transfer, e.transfer, atol=1e-10)

    def test_tensor_matches_local(self):
        rng = np.random.default_rng(5)
        e1, e2 = rand_channel(2, rng), rand_channel(3, rng)
        rho = rand_density(6, rng)
        want = apply_local(e2, apply_local(e1, rho, [2, 3], 0), [2, 3], 1)
        np.testing.assert_allclose(apply(e1.tensor(e2), rho), want, atol=1e-12)


class TestAst:
    def test_examples(self):
        assert is_ast(denote(Skip(), ENV, ["q"]))
        assert not is_ast(denote(Abort(), ENV, ["q"]))
        np.testing.assert_allclose(apply(dual(denote(Abort(), ENV, ["q"])), np.eye(2)), 0)

    def test_skip_body_loop(self):
        loop = parse("while M(m01)[q] == 1 do { skip } od", ENV)
        e = denote(loop, ENV)
        assert not is_ast(e)
        np.testing.assert_allclose(apply(e, proj(ket(1, 2))), 0, atol=1e-15)

    def test_random_ast(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            p = rand_program(rng, ("q",), 4, allow_abort=False)
            assert is_ast(denote(p, ENV, ["q"]))


class TestDualApplyIvp:
    def test_identity(self):
        a = rand_ivp(2, np.random.default_rng(7), inf_rank=1)
        b = dual_apply_ivp(Superoperator.identity(2), a)
        np.testing.assert_allclose(b.finite, a.finite, atol=1e-12)
        assert b.infinite.equals(a.infinite)

    def test_unitary_finite(self):
        q = rand_psd(2, np.random.default_rng(8))
        u = BUILTIN_UNITARIES["H"]
        b = dual_apply_ivp(Superoperator.unitary(u), ivp_new(q))
        np.testing.assert_allclose(b.finite, u.conj().T @ q @ u, atol=1e-12)

    @given(seeds)
    @settings(max_examples=25, deadline=None)
    def test_trace_duality(self, seed):
        rng = np.random.default_rng(seed)
        e = rand_channel(3, rng, nkraus=1 + int(rng.integers(3)))
        a = rand_ivp(3, rng)
        rho = rand_density(3, rng, rank=int(rng.integers(1, 4)))
        lhs = ivp_trace(dual_apply_ivp(e, a), rho)
        rhs = ivp_trace(a, apply(e, rho))
        if np.isinf(lhs) or np.isinf(rhs):
            assert lhs == rhs
        else:
            np.testing.assert_allclose(lhs, rhs, atol=1e-8)

    def test_kraus_sum_form(self):
        rng = np.random.default_rng(9)
        e = rand_channel(2, rng)
        q = rand_psd(2, rng)
        want = sum(k.conj().T @ q @ k for k in e.kraus())
        np.testing.assert_allclose(dual_apply_ivp(e, ivp_new(q)).finite, want, atol=1e-10)

    def test_infinite_part_maps_to_support(self):
        x = Subspace(proj(ket(1, 2)))
        e = denote(Unitary(("q",), "X"), ENV)
        b = dual_apply_ivp(e, ivp_add(ivp_new(np.eye(2)), ivp_infinity(x)))
        assert b.infinite.equals(Subspace(proj(ket(0, 2))))
