import json
import os
import pathlib
import re
import sqlite3
from typing import Dict, List, Optional, Tuple, Union

from . import LangevinMixError

CAMPAIGN_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
TABLE_SUFFIX = "_reports"


class InvalidCampaignError(LangevinMixError):
    """Campaign names must be plain SQL identifiers."""
    pass


class Ledger:
    """SQLite store of experiment reports grouped into campaigns."""

    def __init__(self, db_path: str, row_factory: bool = True) -> None:
        """Open a new or existing ledger file.

        Params:
            db_path (str): Path to the ledger. Created if missing.
            row_factory (bool): Return `sqlite3.Row` objects, which allow
                column access by name. Defaults to `True`.

        Returns:
            None
        """
        self.db_path = db_path
        self._connection = sqlite3.connect(db_path)
        if row_factory:
            self._connection.row_factory = sqlite3.Row
        self._cursor = self._connection.cursor()

    def close(self) -> None:
        self._connection.close()

    def _read_sql_file(self, file_name: str, campaign: Optional[str] = None) -> str:
        """Read a packaged `.sql` template.

        Params:
            file_name (str): Name of the file to read.
            campaign (str): Campaign substituted for `{{campaign}}`.

        Returns:
            sql_text (str): SQL text with the campaign filled in.

        Raises:
            InvalidCampaignError: The campaign is not a plain identifier.
        """
        with open(pathlib.Path(os.path.dirname(__file__)) / "sql" / file_name) as file:
            sql_text = file.read()

        if campaign:
            if not CAMPAIGN_PATTERN.match(campaign):
                raise InvalidCampaignError(f"invalid campaign name {campaign!r}")
            sql_text = sql_text.replace("{{campaign}}", campaign)

        return sql_text

    def add_campaign(self, campaign: str) -> None:
        """Create the `<campaign>_reports` table if it does not exist."""
        sql_text = self._read_sql_file("create-campaign.sql", campaign)
        self._cursor.executescript(sql_text)
        self._connection.commit()

    def add_report(self, campaign: str, report: Dict, wall_clock: Optional[float] = None) -> int:
        """Store one report.

        Params:
            campaign (str): Campaign to store into; created on demand.
            report (Dict): Report body with `experiment`, `config_digest`,
                `seed` and `pass` keys.
            wall_clock (float|None): Run time in seconds.

        Returns:
            report_id (int): Row id of the stored report.
        """
        self.add_campaign(campaign)
        sql_text = self._read_sql_file("insert-report.sql", campaign)
        self._cursor.execute(sql_text, (
            report["experiment"],
            report["config_digest"],
            str(int(report["seed"])),
            int(bool(report["pass"])),
            wall_clock,
            json.dumps(report, sort_keys=True),
        ))
        self._connection.commit()
        return self._cursor.lastrowid

    def get_report(self, campaign: str, report_id: int) -> Union[Tuple, sqlite3.Row]:
        """Retrieve one report row by id."""
        sql_text = self._read_sql_file("select-report.sql", campaign)
        return self._cursor.execute(sql_text, (report_id,)).fetchone()

    def get_reports(self,
                    campaign: str,
                    experiment: Optional[str] = None,
                    config_digest: Optional[str] = None) -> List[Union[Tuple, sqlite3.Row]]:
        """Retrieve the reports of a campaign, optionally filtered.

        Params:
            campaign (str): Campaign to read.
            experiment (str|None): Only reports of this experiment.
            config_digest (str|None): Only reports of this config.

        Returns:
            results (List): Matching rows in insertion order.
        """
        sql_text = self._read_sql_file("select-reports.sql", campaign)
        params = (experiment, experiment, config_digest, config_digest)
        return self._cursor.execute(sql_text, params).fetchall()

    def get_campaigns(self, campaign: Optional[str] = None) -> List[str]:
        """Names of the campaigns in the ledger, filtered by a substring."""
        sql_text = self._read_sql_file("select-campaigns.sql")
        rows = self._cursor.execute(sql_text, (campaign or "",)).fetchall()
        return [row[0][: -len(TABLE_SUFFIX)] for row in rows]

    def delete_campaign(self, campaign: str) -> None:
        """Drop a campaign and every report in it."""
        sql_text = self._read_sql_file("delete-campaign.sql", campaign)
        self._cursor.executescript(sql_text)
        self._connection.commit()
