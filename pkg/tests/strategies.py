"""Hypothesis strategies over a small jet space shared by the property tests."""

from hypothesis import strategies as st

from heavenly.diffexpr import JetSpace, Rule, ConstraintSystem
from heavenly.linop import LinOp, MatrixOp

SP = JetSpace(["t", "x", "y", "z"], ["u", "v"], "x", name="props")
SP.declare("c", [SP.coord("x"), SP.j("v")])
EPS = SP.eps_expr()
# harmonic-type rule c_xx -> -eps c_vv
HARM = ConstraintSystem(SP, [Rule("c", (2, 0), -EPS * SP.fn("c", v=2))], name="harmonic")

JETS = ["u", "v", "u_x", "u_y", "u_z", "v_x", "v_y", "u_xx", "u_xy", "v_xz", "u_t", "v_t"]
SPATIAL_JETS = [j for j in JETS if not j.endswith("t")]


def _atom_pool(jets, with_fn=True, with_coords=True, with_eps=True):
    pool = [SP.j(n) for n in jets]
    if with_coords:
        pool += [SP.coord(c) for c in ("t", "x", "y")]
    if with_fn:
        pool += [SP.fn("c"), SP.fn("c", x=1), SP.fn("c", v=1), SP.fn("c", x=2)]
    if with_eps:
        pool.append(EPS)
    return pool


@st.composite
def polys(draw, jets=JETS, max_terms=4, max_deg=3, **kw):
    pool = _atom_pool(jets, **kw)
    n = draw(st.integers(1, max_terms))
    out = SP.zero()
    for _ in range(n):
        c = draw(st.integers(-5, 5).filter(bool))
        m = SP.const(c)
        for _ in range(draw(st.integers(0, max_deg))):
            m = m * draw(st.sampled_from(pool))
        out = out + m
    return out


@st.composite
def exprs(draw, jets=JETS, **kw):
    """Polynomials, sometimes divided by a non-vanishing-generic denominator."""
    p = draw(polys(jets, **kw))
    if draw(st.booleans()):
        d = draw(st.sampled_from([SP.j("u_xx"), SP.j("u_xx") + SP.j("v_x") ** 2 + 1, SP.coord("x") ** 2 + 1]))
        p = p / d
    return p


@st.composite
def local_ops(draw, jets=SPATIAL_JETS, max_terms=3):
    """Scalar local operators sum f_k D^{J_k} with spatial J."""
    op = LinOp.zero(SP)
    for _ in range(draw(st.integers(1, max_terms))):
        f = draw(polys(jets, max_terms=2, max_deg=2, with_fn=False))
        J = draw(st.sampled_from(["", "x", "y", "xx", "xy", "z"]))
        op = op + LinOp.mult(f, SP) @ (LinOp.D(SP, J) if J else LinOp.mult(SP.one(), SP))
    return op


@st.composite
def matrix_ops(draw):
    return MatrixOp([[draw(local_ops()) for _ in range(2)] for _ in range(2)], SP)


@st.composite
def chars(draw, jets=SPATIAL_JETS):
    return [draw(polys(jets, max_terms=3, max_deg=2)), draw(polys(jets, max_terms=3, max_deg=2))]

