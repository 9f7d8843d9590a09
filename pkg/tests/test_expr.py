import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcalc import expr
from gcalc.expr import ExprError, ExprNameError, ExprSyntaxError, parse


class TestParseEval:
    def test_sum_of_squares(self):
        e = parse("x1^2 + x2^2", ["x1", "x2"])
        assert e.eval({"x1": 1.0, "x2": 2.0}) == 5.0

    def test_cubic(self):
        e = parse("-x1 - x1^3", ["x1"])
        assert e.eval({"x1": 2.0}) == -10.0

    def test_lyapunov_fixture_expression(self):
        # hand evaluation: 2*1*(-1) + 0.5*(4*1*0.5 + 2*1) = -2 + 2 = 0
        e = parse("2*x1*(-1) + 0.5*(4*x1*0.5 + 2*1)", ["x1"])
        assert e.eval({"x1": 1.0}) == 0.0

    def test_precedence(self):
        v = {"x": 0.0}
        assert parse("2^3^2", ["x"]).eval(v) == 512.0  # right-associative
        assert parse("-2^2", ["x"]).eval(v) == -4.0    # unary binds below ^
        assert parse("2^-3", ["x"]).eval(v) == 0.125
        assert parse("6 - 2 - 1", ["x"]).eval(v) == 3.0
        assert parse("12/3/2", ["x"]).eval(v) == 2.0
        assert parse("1 + 2*3", ["x"]).eval(v) == 7.0

    def test_functions(self):
        e = parse("max(x, 0) + min(x, 0) + pos(x) - neg(x)", ["x"])
        assert e.eval({"x": -3.0}) == pytest.approx(-6.0)
        assert parse("sqrt(abs(x))", ["x"]).eval({"x": -9.0}) == 3.0
        assert parse("exp(log(x))", ["x"]).eval({"x": 2.5}) == pytest.approx(2.5)

    def test_vectorised_eval(self):
        e = parse("x^2 + 1", ["x"])
        out = e.eval({"x": np.array([1.0, 2.0, 3.0])})
        assert np.allclose(out, [2.0, 5.0, 10.0])

    def test_constants_folded(self):
        e = parse("a*x + b", ["x"], constants={"a": 2.0, "b": -1.0})
        assert e.eval({"x": 3.0}) == 5.0
        assert e.free_variables == {"x"}

    def test_scientific_literals(self):
        assert parse("1e-3 + 2.5E2", []).eval({}) == pytest.approx(250.001)


class TestErrors:
    def test_unknown_identifier_names_it(self):
        with pytest.raises(ExprNameError) as exc:
            parse("x1 + zz", ["x1"])
        assert exc.value.name == "zz"
        assert exc.value.pos == 5

    def test_syntax_error_position(self):
        with pytest.raises(ExprSyntaxError) as exc:
            parse("1 + * 2", ["x"])
        assert exc.value.pos == 4

    def test_unbalanced_paren(self):
        with pytest.raises(ExprSyntaxError):
            parse("(1 + 2", ["x"])

    def test_function_arity(self):
        with pytest.raises(ExprSyntaxError):
            parse("min(1)", [])
        with pytest.raises(ExprSyntaxError):
            parse("sin(1, 2)", [])

    def test_missing_binding(self):
        e = parse("x + y", ["x", "y"])
        with pytest.raises(ExprError):
            e.eval({"x": 1.0})

    def test_nan_propagates_without_raising(self):
        e = parse("log(x)", ["x"])
        assert np.isnan(e.eval({"x": -1.0}))
        assert np.isinf(parse("1/x", ["x"]).eval({"x": 0.0}))


class TestFiniteDifferences:
    def test_first_derivative(self):
        e = parse("x1^2", ["x1"])
        assert expr.differentiate_fd(e, "x1", {"x1": 3.0}, 1e-5) == pytest.approx(6.0, abs=1e-6)

    def test_second_derivative(self):
        e = parse("x1^4", ["x1"])
        d2 = expr.second_difference_fd(e, "x1", "x1", {"x1": 1.0}, 1e-4)
        assert d2 == pytest.approx(12.0, abs=1e-4)

    def test_constant_derivative_exact_zero(self):
        e = parse("7", ["x1"])
        assert expr.differentiate_fd(e, "x1", {"x1": 0.3}, 1e-5) == 0.0

    def test_mixed_second_derivative(self):
        e = parse("x1*x2^2", ["x1", "x2"])
        d = expr.second_difference_fd(e, "x1", "x2", {"x1": 1.5, "x2": 2.0}, 1e-4)
        assert d == pytest.approx(4.0, abs=1e-5)


def _random_poly(rng, variables, depth=0):
    choice = rng.integers(0, 6 if depth < 3 else 2)
    if choice == 0:
        return f"{rng.uniform(-3, 3):.3f}"
    if choice == 1:
        return str(rng.choice(variables))
    a = _random_poly(rng, variables, depth + 1)
    b = _random_poly(rng, variables, depth + 1)
    if choice == 2:
        return f"({a} + {b})"
    if choice == 3:
        return f"({a} - {b})"
    if choice == 4:
        return f"({a} * {b})"
    return f"({a})^{rng.integers(0, 4)}"


class TestSymbolicAgainstFD:
    def test_polynomial_gradients_match(self):
        rng = np.random.default_rng(7)
        variables = ["x1", "x2"]
        checked = 0
        while checked < 200:
            src = _random_poly(rng, variables)
            e = parse(src, variables)
            var = str(rng.choice(variables))
            point = {"x1": rng.uniform(-1.5, 1.5), "x2": rng.uniform(-1.5, 1.5)}
            sym = expr.differentiate_symbolic(e, var).eval(point)
            if not np.isfinite(sym) or abs(sym) > 1e3:
                continue
            fd = expr.differentiate_fd(e, var, point, 1e-6)
            assert fd == pytest.approx(sym, rel=1e-5, abs=1e-4), src
            checked += 1

    def test_symbolic_rejects_functions(self):
        with pytest.raises(ExprError):
            expr.differentiate_symbolic(parse("sin(x)", ["x"]), "x")
        with pytest.raises(ExprError):
            expr.differentiate_symbolic(parse("x^0.5", ["x"]), "x")


@st.composite
def trees(draw, depth=0):
    kind = draw(st.integers(0, 6 if depth < 3 else 1))
    if kind == 0:
        value = draw(st.floats(min_value=-100, max_value=100, allow_nan=False))
        return expr.Num(abs(value))  # negative literals print as unary minus
    if kind == 1:
        return expr.Var(draw(st.sampled_from(["t", "x1", "x2", "b1"])))
    if kind == 2:
        return expr.Neg(draw(trees(depth=depth + 1)))
    if kind == 3:
        return expr.Call(draw(st.sampled_from(["sin", "exp", "pos", "sqrt"])), (draw(trees(depth=depth + 1)),))
    if kind == 4:
        return expr.Call(draw(st.sampled_from(["min", "max"])),
                         (draw(trees(depth=depth + 1)), draw(trees(depth=depth + 1))))
    op = draw(st.sampled_from(["+", "-", "*", "/", "^"]))
    return expr.Bin(op, draw(trees(depth=depth + 1)), draw(trees(depth=depth + 1)))


class TestRoundTrip:
    @given(trees())
    @settings(max_examples=300, deadline=None)
    def test_parse_print_parse_identity(self, tree):
        variables = ["t", "x1", "x2", "b1"]
        e = expr.Expression(tree, variables)
        reparsed = parse(e.to_source(), variables)
        assert reparsed.root == tree

    def test_source_stable(self):
        src = "-(x1 + 2) * max(x2, 0)^2"
        e = parse(src, ["x1", "x2"])
        assert parse(e.to_source(), ["x1", "x2"]) == e
