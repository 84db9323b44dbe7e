import logging
import os
from typing import Any, Dict

from jinja2 import Template

from utils.data_processor import DataProcessor

RUN_REPORT_TEMPLATE = """\
Clock synchronization run report
================================

Scenario
--------
pairs distributed:     {{ config["n-pairs"] }}
depolarizing p:        {{ config["p"] }}
purification mode:     {{ summary.mode }}
rounds:                {{ summary.rounds }}
seed:                  {{ config["seed"] }}

Effective phase
---------------
phi:                   {{ "%.6f"|format(summary.phi) }} rad (wrapped {{ "%.6f"|format(summary.phi_wrapped) }})
nominal fidelity F0:   {{ "%.6f"|format(summary.nominal_fidelity) }}

Purification
------------
{% for r in trajectory.records -%}
round {{ r.round }}: F = {{ "%.6f"|format(r.fidelity) }}, pairs = {{ r.pairs_remaining }}, success rate = {{ "%.4f"|format(r.success_rate) }}
{% endfor %}
Clock synchronization
---------------------
pairs used:            {{ estimate.M }}
|0> outcomes k:        {{ estimate.k }}
estimated offset:      {{ "%.6e"|format(summary.estimated_offset) }} s
true offset:           {{ "%.6e"|format(summary.true_offset) }} s
error:                 {{ "%.6e"|format(summary.error) }} s

Error budget
------------
dt_sql:                {{ "%.6e"|format(budget.dt_sql) }} s
dt_fidelity:           {{ "%.6e"|format(budget.dt_fidelity) }} s
dt_total:              {{ "%.6e"|format(budget.dt_total) }} s
within 3 dt_total:     {{ "yes" if summary.within_3_dt_total else "no" }}

Classical messages:    {{ message_count }} (firewall scan clean)
"""


class ReportGenerator:
    def __init__(self):
        """
        Initialize the report generator.
        """
        self.template = Template(RUN_REPORT_TEMPLATE)
        logging.info("Report generator initialized")

    def render_run_report(self, report: Dict[str, Any], config: Dict[str, Any]) -> str:
        """
        Render an end-to-end run as plain text.

        Args:
            report (dict): RunReport.to_dict() output
            config (dict): The resolved configuration of the run

        Returns:
            str: The rendered report
        """
        try:
            summary = report["summary"]
            return self.template.render(
                config=config,
                summary=summary,
                trajectory=report["trajectory"],
                estimate=report["estimate"],
                budget=report["budget"],
                message_count=len(report["messages"]),
            )
        except Exception as e:
            logging.error(f"Error rendering run report: {str(e)}")
            raise Exception(f"Failed to render run report: {str(e)}")

    def write_run_report(self, report: Dict[str, Any], config: Dict[str, Any], path: str) -> str:
        """Write the rendered report below the same config comment line the data files carry."""
        text = DataProcessor().header_line(config) + "\n" + self.render_run_report(report, config)
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logging.info(f"Run report written to {path}")
        return path
