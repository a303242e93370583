import json
import sqlite3

import pytest

from conftest import TEST_CAMPAIGN, TEST_DB
from src.langevinmix.ledger import InvalidCampaignError, Ledger


def make_report(experiment="lln", digest="abc123", seed=7, passed=True):
    return {
        "experiment": experiment,
        "config_digest": digest,
        "seed": seed,
        "pass": passed,
        "estimates": {"time_average": 0.01},
    }


def test_ledger_init(ledger_setup):
    """`Ledger` object init has proper connection properties."""

    ledger = Ledger(TEST_DB)

    assert isinstance(ledger._connection, sqlite3.Connection)
    assert isinstance(ledger._cursor, sqlite3.Cursor)
    assert ledger._connection.row_factory is sqlite3.Row
    ledger.close()


def test_ledger_reads_sql_file(ledger_setup):
    """SQL templates get the campaign filled in."""

    sql_text = ledger_setup._read_sql_file("select-report.sql", TEST_CAMPAIGN)

    expected_sql_text = f"""
    SELECT
        id, experiment, config_digest, seed, passed, wall_clock, created_at, body
    FROM
        {TEST_CAMPAIGN}_reports
    WHERE
        id = ?
    ;
    """

    # sanitize both strings to compare
    sql_text = " ".join(sql_text.replace(",", ", ").split())
    expected_sql_text = " ".join(expected_sql_text.replace(",", ", ").split())

    assert sql_text == expected_sql_text


def test_ledger_rejects_unsafe_campaign(ledger_setup):
    """Campaign names are spliced into SQL, so only identifiers pass."""

    with pytest.raises(InvalidCampaignError):
        ledger_setup.add_campaign("test; DROP TABLE x")
    with pytest.raises(InvalidCampaignError):
        ledger_setup.get_reports("1test")


def test_ledger_add_campaign(ledger_setup):
    """A campaign is a reports table with a digest index."""

    ledger_setup.add_campaign(TEST_CAMPAIGN)
    ledger_setup.add_campaign(TEST_CAMPAIGN)

    tables = ledger_setup._cursor.execute(
        "SELECT name FROM sqlite_master WHERE type = 'table' AND tbl_name LIKE 'test%';"
    ).fetchall()
    indexes = ledger_setup._cursor.execute(
        "SELECT name FROM sqlite_master WHERE type = 'index' AND tbl_name LIKE 'test%';"
    ).fetchall()

    assert tables == [("test_reports",)]
    assert indexes == [("test_reports_digest_idx",)]


def test_ledger_add_and_get_report(ledger_setup):
    """A stored report comes back with its columns and JSON body."""

    report = make_report()

    report_id = ledger_setup.add_report(TEST_CAMPAIGN, report, wall_clock=1.5)
    row = ledger_setup.get_report(TEST_CAMPAIGN, report_id)

    assert row[0] == report_id
    assert row[1:6] == ("lln", "abc123", "7", 1, 1.5)
    assert json.loads(row[7]) == report


def test_ledger_keeps_full_width_seeds(ledger_setup):
    """Seeds use all 64 bits, beyond SQLite's signed integers."""

    seed = 2 ** 64 - 1

    report_id = ledger_setup.add_report(TEST_CAMPAIGN, make_report(seed=seed))

    assert int(ledger_setup.get_report(TEST_CAMPAIGN, report_id)[3]) == seed


def test_ledger_filters_reports(ledger_setup_row_factory):
    """Reports filter by experiment and by config digest."""

    ledger = ledger_setup_row_factory
    ledger.add_report(TEST_CAMPAIGN, make_report("lln", "one"))
    ledger.add_report(TEST_CAMPAIGN, make_report("clt", "one", passed=False))
    ledger.add_report(TEST_CAMPAIGN, make_report("lln", "two"))

    everything = ledger.get_reports(TEST_CAMPAIGN)
    lln = ledger.get_reports(TEST_CAMPAIGN, experiment="lln")
    digest_one = ledger.get_reports(TEST_CAMPAIGN, config_digest="one")
    both = ledger.get_reports(TEST_CAMPAIGN, experiment="lln", config_digest="two")

    assert len(everything) == 3
    assert [row["config_digest"] for row in lln] == ["one", "two"]
    assert [row["experiment"] for row in digest_one] == ["lln", "clt"]
    assert [row["passed"] for row in digest_one] == [1, 0]
    assert len(both) == 1 and both[0]["wall_clock"] is None


def test_ledger_campaigns(ledger_setup):
    """Campaigns are listed by name and can be dropped."""

    ledger_setup.add_campaign("test_alpha")
    ledger_setup.add_campaign("test_beta")
    ledger_setup.add_report("other", make_report())

    assert ledger_setup.get_campaigns() == ["other", "test_alpha", "test_beta"]
    assert ledger_setup.get_campaigns("alpha") == ["test_alpha"]

    ledger_setup.delete_campaign("test_alpha")

    assert ledger_setup.get_campaigns() == ["other", "test_beta"]
