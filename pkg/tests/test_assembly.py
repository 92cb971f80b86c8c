"""Assembly oracles: element matrices by hand, invariants from the weak form,
cross-checks of batched field evaluation against the per-point evaluator."""

import math

import numpy as np
import pytest
from scipy import sparse

from thbheat.assembly import (
    CircularArc,
    FieldEvaluator,
    Geometry,
    HeatSource,
    Material,
    PolylinePath,
    alternating_tracks,
    assemble,
    cell_quadrature,
    evaluate_field_params,
    gram_matrix,
    moment_vector,
    sample_field,
    source_value,
    write_field_csv,
    write_vtk,
)
from thbheat.errors import DomainError, StalenessError
from thbheat.hierarchy import (
    CellIndex,
    StateVector,
    build_initial,
    subdivide_cell,
    thb_eval,
)
from thbheat.splines import KnotVector, TensorSpace


def make_space(p=2, n0=4, max_levels=4):
    base = TensorSpace.unit_square(p, n0)
    return build_initial(base, max_levels)


def refined_space(p=2, n0=4, max_levels=4):
    mesh, space = make_space(p, n0, max_levels)
    subdivide_cell(mesh, space, CellIndex(0, 0, 0))
    subdivide_cell(mesh, space, CellIndex(0, 1, 1))
    subdivide_cell(mesh, space, CellIndex(1, 0, 0))
    return mesh, space


STEEL = Material(conductivity=0.02, specific_heat=500.0, density=8e-6, initial_temperature=20.0)


def fixed_source(power=100.0, absorptivity=0.5, radius=1.0, at=(3.0, 3.0)):
    path = CircularArc(center=(at[0] - 1.0, at[1]), radius=1.0, start_angle=0.0, angular_speed=0.0)
    return HeatSource(power=power, absorptivity=absorptivity, radius=radius, path=path)


# -- validation ---------------------------------------------------------------


def test_geometry_rejects_nonpositive_side():
    with pytest.raises(DomainError):
        Geometry(0.0)
    with pytest.raises(DomainError):
        Geometry(-2.0)


def test_material_rejects_bad_values():
    with pytest.raises(DomainError):
        Material(conductivity=0.0, specific_heat=1.0, density=1.0, initial_temperature=0.0)
    with pytest.raises(DomainError):
        Material(conductivity=1.0, specific_heat=-1.0, density=1.0, initial_temperature=0.0)
    with pytest.raises(DomainError):
        Material(conductivity=1.0, specific_heat=1.0, density=1.0, initial_temperature=math.nan)


def test_source_rejects_bad_values():
    path = CircularArc(center=(0.0, 0.0), radius=1.0, start_angle=0.0, angular_speed=1.0)
    with pytest.raises(DomainError):
        HeatSource(power=-1.0, absorptivity=0.5, radius=1.0, path=path)
    with pytest.raises(DomainError):
        HeatSource(power=1.0, absorptivity=0.0, radius=1.0, path=path)
    with pytest.raises(DomainError):
        HeatSource(power=1.0, absorptivity=1.5, radius=1.0, path=path)
    with pytest.raises(DomainError):
        HeatSource(power=1.0, absorptivity=0.5, radius=0.0, path=path)


# -- scan paths ---------------------------------------------------------------


def test_circular_arc_position():
    arc = CircularArc(center=(5.0, 5.0), radius=2.5, start_angle=0.0, angular_speed=0.628)
    assert arc.position(0.0) == pytest.approx((7.5, 5.0))
    t = 2.0
    assert arc.position(t) == pytest.approx(
        (5.0 + 2.5 * math.cos(0.628 * t), 5.0 + 2.5 * math.sin(0.628 * t))
    )
    assert arc.duration == math.inf


def test_polyline_positions_and_duration():
    path = PolylinePath(((0.0, 0.0), (3.0, 0.0), (3.0, 4.0)), (1.0, 2.0))
    assert path.duration == pytest.approx(5.0)
    assert path.position(0.0) == pytest.approx((0.0, 0.0))
    assert path.position(1.5) == pytest.approx((1.5, 0.0))
    assert path.position(3.0) == pytest.approx((3.0, 0.0))
    assert path.position(4.0) == pytest.approx((3.0, 2.0))
    assert path.position(99.0) == pytest.approx((3.0, 4.0))


def test_polyline_validation():
    with pytest.raises(DomainError):
        PolylinePath(((0.0, 0.0),), ())
    with pytest.raises(DomainError):
        PolylinePath(((0.0, 0.0), (1.0, 0.0)), (1.0, 2.0))
    with pytest.raises(DomainError):
        PolylinePath(((0.0, 0.0), (1.0, 0.0)), (0.0,))


def test_alternating_tracks_layout():
    path = alternating_tracks(origin=(1.0, 1.0), track_length=4.0, hatch=0.5, n_tracks=3, speed=2.0)
    assert path.waypoints == (
        (1.0, 1.0),
        (5.0, 1.0),
        (5.0, 1.5),
        (1.0, 1.5),
        (1.0, 2.0),
        (5.0, 2.0),
    )
    assert path.duration == pytest.approx((4.0 + 0.5 + 4.0 + 0.5 + 4.0) / 2.0)
    # constant speed through the turnaround keeps the position continuous
    t_turn = 4.0 / 2.0
    eps = 1e-9
    before = np.array(path.position(t_turn - eps))
    after = np.array(path.position(t_turn + eps))
    assert np.allclose(before, after, atol=1e-6)


def test_source_peak_and_falloff():
    src = fixed_source(power=100.0, absorptivity=0.5, radius=1.0, at=(3.0, 3.0))
    assert source_value(src, 0.0, (3.0, 3.0)) == pytest.approx(50.0)
    assert source_value(src, 0.0, (4.0, 3.0)) == pytest.approx(50.0 * math.exp(-1.0))
    assert source_value(src, 0.0, (3.0, 4.0)) == pytest.approx(50.0 * math.exp(-1.0))
    far = source_value(src, 0.0, (30.0, 30.0))
    assert far < 1e-100


def test_source_switches_off_after_path_ends():
    path = PolylinePath(((0.0, 0.0), (2.0, 0.0)), (1.0,))
    src = HeatSource(power=10.0, absorptivity=1.0, radius=0.5, path=path)
    on = src.value(np.array([[2.0, 0.0]]), 2.0)
    off = src.value(np.array([[2.0, 0.0]]), 2.0 + 1e-9)
    assert on[0] == pytest.approx(10.0)
    assert off[0] == 0.0


# -- matrices -----------------------------------------------------------------


def test_bilinear_element_stiffness_matches_hand_values():
    # one bilinear element: diag 2/3, edge-neighbours -1/6, diagonal -1/3,
    # scaled by the conductivity and independent of the element size
    base = TensorSpace.unit_square(1, 1)
    mesh, space = build_initial(base, 1)
    mat = Material(conductivity=3.0, specific_heat=1.0, density=1.0, initial_temperature=0.0)
    sys = assemble(space, Geometry(2.0), mat, fixed_source(), t=0.0)
    K = sys.K.toarray()
    # dof order (a, b): (0,0), (0,1), (1,0), (1,1)
    expect = 3.0 * np.array(
        [
            [2 / 3, -1 / 6, -1 / 6, -1 / 3],
            [-1 / 6, 2 / 3, -1 / 3, -1 / 6],
            [-1 / 6, -1 / 3, 2 / 3, -1 / 6],
            [-1 / 3, -1 / 6, -1 / 6, 2 / 3],
        ]
    )
    assert np.allclose(K, expect, atol=1e-12)


def test_bilinear_element_gram_matches_hand_values():
    base = TensorSpace.unit_square(1, 1)
    mesh, space = build_initial(base, 1)
    G = gram_matrix(space, Geometry(2.0)).toarray()
    g1 = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    assert np.allclose(G, 4.0 * np.kron(g1, g1), atol=1e-12)


def test_total_mass_on_refined_mesh():
    mesh, space = refined_space(p=2)
    geom = Geometry(10.0)
    sys = assemble(space, geom, STEEL, fixed_source(), t=0.0)
    ones = np.ones(space.n_dofs)
    total = ones @ (sys.M @ ones)
    expect = STEEL.volumetric_heat_capacity * geom.side_length**2
    assert total == pytest.approx(expect, rel=1e-12)


def test_stiffness_annihilates_constants():
    mesh, space = refined_space(p=3, n0=2, max_levels=3)
    sys = assemble(space, Geometry(7.0), STEEL, fixed_source(), t=0.0)
    ones = np.ones(space.n_dofs)
    assert np.max(np.abs(sys.K @ ones)) < 1e-12


def test_matrices_symmetric_and_mass_positive():
    mesh, space = refined_space(p=2)
    sys = assemble(space, Geometry(5.0), STEEL, fixed_source(), t=0.0)
    M = sys.M.toarray()
    K = sys.K.toarray()
    assert np.allclose(M, M.T, atol=1e-13)
    assert np.allclose(K, K.T, atol=1e-13)
    np.linalg.cholesky(M)  # raises if not positive definite


def test_constant_source_load_integrates_exactly():
    mesh, space = refined_space(p=2)
    geom = Geometry(4.0)

    def const_source(pts, t):
        return np.full(pts.shape[0], 3.0)

    sys = assemble(space, geom, STEEL, const_source, t=0.0)
    assert np.sum(sys.f) == pytest.approx(3.0 * geom.side_length**2, rel=1e-12)
    again = sys.load_vector(17.0)
    assert np.allclose(again, sys.f)


def test_load_vector_tracks_the_moving_source():
    mesh, space = make_space(p=2, n0=8, max_levels=2)
    geom = Geometry(10.0)
    arc = CircularArc(center=(5.0, 5.0), radius=2.5, start_angle=0.0, angular_speed=math.pi)
    src = HeatSource(power=200.0, absorptivity=0.4, radius=0.8, path=arc)
    sys = assemble(space, geom, STEEL, src, t=0.0)
    f0 = sys.load_vector(0.0)
    f1 = sys.load_vector(1.0)  # beam at the antipodal point
    assert not np.allclose(f0, f1)
    # total absorbed power is position independent away from the boundary
    assert np.sum(f0) == pytest.approx(np.sum(f1), rel=1e-6)
    assert np.sum(f0) == pytest.approx(200.0 * 0.4 * math.pi * 0.8**2, rel=5e-3)


def test_quadrature_cache_reuses_until_generation_changes():
    mesh, space = make_space()
    geom = Geometry(1.0)
    first = cell_quadrature(space, geom, 3)
    assert cell_quadrature(space, geom, 3) is first
    assert cell_quadrature(space, geom, 2) is not first
    subdivide_cell(mesh, space, CellIndex(0, 2, 2))
    assert cell_quadrature(space, geom, 3) is not first


def test_assemble_rejects_bad_quadrature_order():
    mesh, space = make_space()
    with pytest.raises(DomainError):
        assemble(space, Geometry(1.0), STEEL, fixed_source(), t=0.0, n_gauss=0)


# -- projection building blocks -----------------------------------------------


def test_moment_vector_of_member_field_recovers_coefficients():
    mesh, space = refined_space(p=2)
    geom = Geometry(3.0)
    rng = np.random.default_rng(7)
    coeffs = rng.normal(size=space.n_dofs)

    def fieldfn(pts):
        return evaluate_field_params(space, coeffs, geom.to_parametric(pts))

    G = gram_matrix(space, geom)
    m = moment_vector(space, geom, fieldfn)
    from scipy.sparse.linalg import spsolve

    sol = spsolve(G.tocsc(), m)
    assert np.allclose(sol, coeffs, atol=1e-9)


# -- field evaluation ----------------------------------------------------------


def test_batched_evaluation_matches_per_point_oracle():
    mesh, space = refined_space(p=2)
    rng = np.random.default_rng(11)
    coeffs = rng.normal(size=space.n_dofs)
    pts = rng.uniform(0.0, 1.0, size=(40, 2))
    batched = evaluate_field_params(space, coeffs, pts)
    for k in range(pts.shape[0]):
        direct = sum(
            coeffs[space.dof_pos[fv.fn]] * fv.value for fv in thb_eval(space, pts[k])
        )
        assert batched[k] == pytest.approx(direct, abs=1e-12)


def test_constant_state_samples_constant():
    mesh, space = refined_space(p=3, n0=2, max_levels=3)
    geom = Geometry(6.0)
    theta = space.constant_state(20.0)
    grid = sample_field(space, geom, theta, 17)
    assert grid.shape == (17, 17)
    assert np.allclose(grid, 20.0, atol=1e-11)


def test_linear_field_from_greville_coefficients():
    # B-splines reproduce linears with Greville-abscissa coefficients, so the
    # sampled grid must equal the physical x coordinate
    mesh, space = make_space(p=3, n0=5, max_levels=1)
    L = 7.0
    geom = Geometry(L)
    grev = space.mesh.space(0).kv_x.greville()
    coeffs = np.array([L * grev[fn.a] for fn in space.dofs])
    theta = StateVector(coeffs, 0.0, space.generation)
    n = 11
    grid = sample_field(space, geom, theta, n)
    x_phys = L * np.linspace(0.0, 1.0, n)
    assert np.max(np.abs(grid - x_phys[:, None])) < 1e-12


def test_field_evaluator_checks_generation():
    mesh, space = make_space()
    theta = space.constant_state(1.0)
    subdivide_cell(mesh, space, CellIndex(0, 0, 0))
    with pytest.raises(StalenessError):
        FieldEvaluator(space, theta, Geometry(1.0))


def test_evaluation_rejects_points_outside_domain():
    mesh, space = make_space()
    with pytest.raises(DomainError):
        evaluate_field_params(space, np.ones(space.n_dofs), np.array([[1.5, 0.5]]))


# -- export --------------------------------------------------------------------


def test_vtk_writer_layout(tmp_path):
    geom = Geometry(2.0)
    vals = np.arange(9.0).reshape(3, 3)
    out = tmp_path / "field.vtk"
    write_vtk(out, vals, geom)
    lines = out.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[3] == "DATASET STRUCTURED_POINTS"
    assert lines[4] == "DIMENSIONS 3 3 1"
    assert lines[7] == "POINT_DATA 9"
    assert lines[8] == "SCALARS temperature double"
    data = [float(s) for s in lines[10:]]
    assert len(data) == 9
    # x varies fastest: first three entries walk the first column of values
    assert data[:3] == [vals[0, 0], vals[1, 0], vals[2, 0]]


def test_csv_writer_roundtrip(tmp_path):
    geom = Geometry(4.0)
    vals = np.arange(16.0).reshape(4, 4)
    out = tmp_path / "field.csv"
    write_field_csv(out, vals, geom)
    lines = out.read_text().splitlines()
    assert lines[0] == "x,y,value"
    assert len(lines) == 17
    x, y, v = (float(s) for s in lines[1].split(","))
    assert (x, y, v) == (0.0, 0.0, 0.0)
    x, y, v = (float(s) for s in lines[-1].split(","))
    assert (x, y, v) == (4.0, 4.0, 15.0)
