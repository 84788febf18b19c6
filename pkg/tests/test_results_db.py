import pytest

from dacs.connections.results_db import ResultsDB
from dacs.harness.cli import cli_main
from dacs.models.replicate import ReplicateRow, ReplicateRowPydantic


@pytest.fixture
def db(tmp_path):
    store = ResultsDB(f"sqlite:///{tmp_path / 'results.db'}")
    yield store
    store.close()


def make_row(sweep_id, replicate, method="dacs", **extra):
    return ReplicateRowPydantic(
        sweep_id=sweep_id, setting="u1", replicate=replicate, seed=replicate, alpha=0.2, method=method, **extra
    )


class TestResultsDB:
    def test_store_and_load(self, db):
        rows = [make_row("s1", 0, fdp=0.0, power=0.5, tau_star=4), make_row("s1", 1, method="cs", subset_of_cs=True)]
        assert db.store_rows(rows) == 2
        loaded = db.load_sweep("s1")
        assert [r.replicate for r in loaded] == [0, 1]
        assert loaded[0].power == 0.5 and loaded[0].tau_star == 4
        assert loaded[1].subset_of_cs is True
        assert loaded[0].created_at is not None

    def test_sweeps_are_separate(self, db):
        db.store_rows([make_row("s1", 0), make_row("s2", 0)])
        assert len(db.load_sweep("s2")) == 1
        assert db.load_sweep("missing") == []

    def test_optional_fields_stay_empty(self, db):
        db.store_rows([make_row("s3", 0)])
        row = db.load_sweep("s3")[0]
        assert row.normalized_diversity is None
        assert row.n_selected == 0
        assert row.wall_time is None

    def test_wall_time_round_trip(self, db):
        db.store_rows([make_row("s4", 0, wall_time=0.25)])
        assert db.load_sweep("s4")[0].wall_time == pytest.approx(0.25)


def test_simulate_store(tmp_path, monkeypatch):
    url = f"sqlite:///{tmp_path / 'sweeps.db'}"
    monkeypatch.setenv("DACS_RESULTS_URL", url)
    monkeypatch.delenv("DACS_METRICS_PORT", raising=False)
    code = cli_main([
        "simulate", "--setting", "u2", "--reps", "2", "--alpha-grid", "0.3",
        "--n-calib", "20", "--n-test", "10", "--out-dir", str(tmp_path / "out"), "--store",
    ])
    assert code == 0
    db = ResultsDB(url)
    try:
        with db.get_session() as session:
            rows = session.query(ReplicateRow).all()
            assert len(rows) == 2 * 2
            assert all(r.wall_time is not None and r.wall_time >= 0 for r in rows)
    finally:
        db.close()
