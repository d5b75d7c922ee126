import numpy as np
import pytest

from toporeparam.fem import Grid
from toporeparam.tasks import (
    LARGE_TASK_ELEMENTS,
    TaskValidationError,
    builtin_task,
    builtin_task_names,
    builtin_tasks,
    dump_task,
    load_task,
    parse_task,
    select_nodes,
    task_from_dict,
)

MBB = """
name: mbb
nelx: 60
nely: 20
volfrac: 0.5
supports:
  - {nodes: "edge(left)", axes: x}
  - {nodes: "point(60, 20)", axes: y}
loads:
  - {nodes: "point(0, 0)", fy: -1.0}
"""


class TestParse:
    def test_mbb_dofs(self):
        task = parse_task(MBB)
        np.testing.assert_array_equal(task.fixed_dofs, list(range(0, 42, 2)) + [2561])
        assert task.load_vector == {1: -1.0}
        assert task.grid.n_dofs == 2562

    def test_roundtrip(self, tmp_path):
        task = parse_task(MBB)
        path = tmp_path / "t.yaml"
        path.write_text(dump_task(task))
        again = load_task(path)
        assert again == task
        np.testing.assert_array_equal(again.fixed_dofs, task.fixed_dofs)

    def test_simp_override(self):
        task = parse_task(MBB + "simp: {penal: 4.0, Emin: 1e-6}\n")
        assert task.simp_config.penal == 4.0
        assert task.simp_config.Emin == 1e-6

    @pytest.mark.parametrize(
        "edit",
        [
            lambda d: d.update(volfrac=0.0),
            lambda d: d.update(volfrac=1.2),
            lambda d: d.update(supports=[]),
            lambda d: d.update(loads=[]),
            lambda d: d.update(nelx=0),
            lambda d: d.update(bogus=1),
            lambda d: d.pop("volfrac"),
            lambda d: d.update(schema_version=7),
            lambda d: d.update(simp={"penalty": 3}),
            lambda d: d.update(supports=[{"nodes": "edge(left)", "axes": "z"}]),
            lambda d: d.update(supports=[{"nodes": "point(0, 0)", "axes": "xy"}]),
            lambda d: d.update(loads=[{"nodes": "edge(left)", "fx": 1.0}]),
            lambda d: d.update(loads=[{"nodes": "point(61, 0)", "fy": -1.0}]),
        ],
    )
    def test_invalid_documents(self, edit):
        import yaml

        doc = yaml.safe_load(MBB)
        edit(doc)
        with pytest.raises(TaskValidationError):
            task_from_dict(doc)

    def test_bad_yaml(self):
        with pytest.raises(TaskValidationError):
            parse_task("name: [unclosed")


class TestSelectors:
    grid = Grid(4, 2)

    @pytest.mark.parametrize(
        "selector,expected",
        [
            ("edge(left)", [0, 1, 2]),
            ("edge(right)", [12, 13, 14]),
            ("edge(top)", [0, 3, 6, 9, 12]),
            ("edge(bottom)", [2, 5, 8, 11, 14]),
            ("point(2, 1)", [7]),
            ("region(1:2, 0:1)", [3, 4, 6, 7]),
            ("line(0, 0, 4, 0)", [0, 3, 6, 9, 12]),
        ],
    )
    def test_nodes(self, selector, expected):
        assert sorted(select_nodes(self.grid, selector).tolist()) == expected

    @pytest.mark.parametrize("selector", ["edge(middle)", "point(5, 0)", "circle(1)", "region(2:1, 0:0)"])
    def test_rejects(self, selector):
        with pytest.raises(TaskValidationError):
            select_nodes(self.grid, selector)


class TestBuiltins:
    def test_suite_requirements(self):
        tasks = builtin_tasks()
        names = builtin_task_names()
        assert len(tasks) >= 10
        assert "mbb_beam_60x20" in names
        assert len({t.category for t in tasks}) >= 6
        assert any(t.n_elements >= LARGE_TASK_ELEMENTS for t in tasks)
        suite = [t for t in tasks if t.name != "mbb_beam_60x20"]
        assert all(t.in_suite_range() for t in suite)

    @pytest.mark.parametrize("name", builtin_task_names())
    def test_builtin_validates(self, name):
        task = builtin_task(name, check_solvable=name != "mbb_beam_256x128")
        assert task.name == name

    def test_unknown_builtin(self):
        with pytest.raises((KeyError, TaskValidationError)):
            builtin_task("no_such_task")
