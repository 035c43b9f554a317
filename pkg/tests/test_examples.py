from __future__ import annotations

import pytest

from peace.examples import EXAMPLES, newton_closed_form, run_example, uniform_closed_form


@pytest.mark.parametrize("name", list(EXAMPLES))
def test_builtin_example_passes(name):
    report = run_example(name)
    assert report.passed, report.to_text()
    assert report.to_text().endswith("PASS")
    assert report.to_dict()["passed"]


def test_unknown_example_raises():
    with pytest.raises(KeyError, match="nosuch"):
        run_example("nosuch")


def test_closed_form_reference_values():
    assert newton_closed_form(1.0) == pytest.approx(2.820947917738781, rel=1e-12)
    assert newton_closed_form(0.5) == pytest.approx(1.0, rel=1e-12)
    assert uniform_closed_form([2], [1.0], 0.0) == 1.0


def test_dis_con_table_lists_every_resolution():
    report = run_example("dis-con")
    assert [n.split()[0] for n in report.notes] == ["cells=", "cells=", "cells=", "cells=", "cells="]
    assert report.rows[0].error <= 0.01
