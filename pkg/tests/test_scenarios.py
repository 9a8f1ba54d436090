"""Builtin geometries and scenario file round-tripping."""

import numpy as np
import pytest

from pitpinn.physics import signed_interface_distance
from pitpinn.scenarios import (BUILTIN_NAMES, DEFAULT_L_C, DEFAULT_T_C,
                               ScenarioFileError, builtin_scenario,
                               scenario_from_file, scenario_to_file)


def test_default_scales():
    assert DEFAULT_L_C == 1.0e-4
    assert DEFAULT_T_C == 10.0


def test_builtin_names_cover_all():
    assert BUILTIN_NAMES == ("2d-2pit", "2d-3pit", "3d-1pit", "3d-2pit")
    for name in BUILTIN_NAMES:
        scen = builtin_scenario(name)
        assert scen.name == name


def test_builtin_2d_2pit_geometry():
    scen = builtin_scenario("2d-2pit")
    # 100 x 50 micron box, 5 micron pits 30 microns apart on the bottom
    assert scen.space_lo == (-0.5, 0.0)
    assert scen.space_hi == (0.5, 0.5)
    assert scen.t_end == 1.0
    assert len(scen.pits) == 2
    (c1, r1), (c2, r2) = scen.pits
    assert r1 == r2 == pytest.approx(0.05)
    assert abs(c1[0] - c2[0]) == pytest.approx(0.30)
    assert c1[1] == c2[1] == 0.0
    assert scen.flux_free_faces == {"xmin", "xmax"}
    assert scen.solid_boundary_faces == {"ymin", "ymax"}
    assert scen.liquid_boundary_faces == frozenset()


def test_builtin_2d_3pit_adds_top_center_pit():
    two = builtin_scenario("2d-2pit")
    three = builtin_scenario("2d-3pit")
    assert set(two.pits) < set(three.pits)
    extra = (set(three.pits) - set(two.pits)).pop()
    (cx, cy), r = extra
    assert cx == 0.0 and cy == pytest.approx(0.5)
    assert r == pytest.approx(0.05)


def test_builtin_3d_1pit_geometry():
    scen = builtin_scenario("3d-1pit")
    # 80 x 80 x 40 micron box, one 10 micron pit on the top face
    assert scen.space_lo == (-0.4, -0.4, 0.0)
    assert scen.space_hi == (0.4, 0.4, 0.4)
    ((cx, cy, cz), r) = scen.pits[0]
    assert (cx, cy, cz) == (0.0, 0.0, 0.4)
    assert r == pytest.approx(0.10)
    assert scen.flux_free_faces == {"xmin", "xmax", "ymin", "ymax"}


def test_builtin_3d_2pit_geometry():
    scen = builtin_scenario("3d-2pit")
    assert scen.space_lo == (-0.8, -0.8, 0.0)
    assert scen.space_hi == (0.8, 0.8, 0.4)
    (c1, r1), (c2, r2) = scen.pits
    assert r1 == r2 == pytest.approx(0.10)
    # 40 micron separation along x
    assert abs(c1[0] - c2[0]) == pytest.approx(0.40)
    assert c1[2] == c2[2] == pytest.approx(0.4)


def test_builtin_pits_lie_on_a_solid_face():
    for name in BUILTIN_NAMES:
        scen = builtin_scenario(name)
        for center, _ in scen.pits:
            on_face = any(
                center[j] in (scen.space_lo[j], scen.space_hi[j])
                for j in range(scen.dim))
            assert on_face, f"{name}: pit center {center} not on a face"


def test_builtin_unknown_name():
    with pytest.raises(ScenarioFileError):
        builtin_scenario("4d-0pit")


def test_file_round_trip(tmp_path):
    for name in BUILTIN_NAMES:
        scen = builtin_scenario(name)
        path = tmp_path / f"{name}.ini"
        scenario_to_file(scen, path)
        back, l_c, t_c = scenario_from_file(path)
        assert l_c == DEFAULT_L_C and t_c == DEFAULT_T_C
        assert back.name == scen.name
        assert back.dim == scen.dim
        np.testing.assert_allclose(back.space_lo, scen.space_lo, atol=1e-15)
        np.testing.assert_allclose(back.space_hi, scen.space_hi, atol=1e-15)
        assert back.t_end == pytest.approx(scen.t_end, rel=1e-15)
        assert len(back.pits) == len(scen.pits)
        for (bc, br), (sc, sr) in zip(back.pits, scen.pits):
            np.testing.assert_allclose(bc, sc, atol=1e-15)
            assert br == pytest.approx(sr, rel=1e-15)
        assert back.solid_boundary_faces == scen.solid_boundary_faces
        assert back.liquid_boundary_faces == scen.liquid_boundary_faces
        assert back.flux_free_faces == scen.flux_free_faces


def test_file_units_are_si(tmp_path):
    scen = builtin_scenario("2d-2pit")
    path = tmp_path / "scen.ini"
    scenario_to_file(scen, path)
    text = path.read_text()
    # domain extents written in metres: 100 microns wide, 10 s horizon
    lo, hi = [float(v) for v in
              [ln for ln in text.splitlines()
               if ln.startswith("x = ")][0][4:].split()]
    assert lo == pytest.approx(-5.0e-5) and hi == pytest.approx(5.0e-5)
    assert "t_end = 10" in text


def test_round_trip_preserves_signed_distance(tmp_path):
    scen = builtin_scenario("2d-3pit")
    path = tmp_path / "scen.ini"
    scenario_to_file(scen, path)
    back, _, _ = scenario_from_file(path)
    pts = np.array([[-0.15, 0.02], [0.3, 0.3], [0.0, 0.48]])
    np.testing.assert_allclose(signed_interface_distance(pts, back),
                               signed_interface_distance(pts, scen),
                               atol=1e-15)


def test_missing_file():
    with pytest.raises(ScenarioFileError):
        scenario_from_file("/nonexistent/path.ini")


def test_bad_schema_version(tmp_path):
    scen = builtin_scenario("2d-2pit")
    path = tmp_path / "scen.ini"
    scenario_to_file(scen, path)
    text = path.read_text().replace("schema_version = 1",
                                    "schema_version = 99")
    path.write_text(text)
    with pytest.raises(ScenarioFileError, match="schema_version"):
        scenario_from_file(path)


def test_syntax_error_carries_line_number(tmp_path):
    path = tmp_path / "broken.ini"
    path.write_text("[meta]\nschema_version = 1\nthis line has no equals\n")
    with pytest.raises(ScenarioFileError, match="line"):
        scenario_from_file(path)


def test_pit_arity_error(tmp_path):
    scen = builtin_scenario("2d-2pit")
    path = tmp_path / "scen.ini"
    scenario_to_file(scen, path)
    lines = path.read_text().splitlines()
    trimmed = []
    for ln in lines:
        if ln.startswith("pit0 = "):
            ln = " ".join(ln.split()[:-1])   # drop the radius entry
        trimmed.append(ln)
    path.write_text("\n".join(trimmed) + "\n")
    with pytest.raises(ScenarioFileError, match="pit"):
        scenario_from_file(path)


def test_unknown_face_rejected(tmp_path):
    scen = builtin_scenario("2d-2pit")
    path = tmp_path / "scen.ini"
    scenario_to_file(scen, path)
    text = path.read_text().replace("flux = xmax xmin", "flux = xmax zmid")
    assert "zmid" in text
    path.write_text(text)
    with pytest.raises(ScenarioFileError, match="zmid"):
        scenario_from_file(path)


def test_missing_section_reported(tmp_path):
    path = tmp_path / "scen.ini"
    path.write_text("[meta]\nschema_version = 1\ndim = 2\n")
    with pytest.raises(ScenarioFileError):
        scenario_from_file(path)


def test_custom_scales_round_trip(tmp_path):
    scen = builtin_scenario("2d-2pit")
    path = tmp_path / "scen.ini"
    scenario_to_file(scen, path, l_c=2.0e-4, t_c=5.0)
    text = path.read_text()
    assert "l_c = 0.0002" in text and "t_c = 5" in text
    # SI output scales with the chosen characteristic units ...
    assert "t_end = 5" in text
    # ... and reading back recovers the same non-dimensional scenario
    back, l_c, t_c = scenario_from_file(path)
    assert l_c == 2.0e-4 and t_c == 5.0
    np.testing.assert_allclose(back.space_hi, scen.space_hi, atol=1e-15)
    assert back.t_end == pytest.approx(scen.t_end)
