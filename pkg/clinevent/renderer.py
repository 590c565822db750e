"""Jinja2 rendering of standoff annotation files and metric reports."""

from collections.abc import Iterable
from functools import lru_cache
from typing import Any

from jinja2 import Environment, PackageLoader, select_autoescape


class StandoffRenderer:
    """Renders annotation sets and metric reports using the package templates."""

    def __init__(self) -> None:
        self.env = Environment(
            loader=PackageLoader("clinevent", "templates"),
            autoescape=select_autoescape(enabled_extensions=("xml.jinja",), default_for_string=False),
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )

    def render_annotations(self, annotation_set: Any) -> str:
        """Render an AnnotationSet to the standoff XML format."""
        template = self.env.get_template("anafora.xml.jinja")
        return template.render(doc_id=annotation_set.doc_id, events=annotation_set.events)

    def render_report(self, reports: Iterable[Any]) -> str:
        """Render MetricReports as an aligned plain-text table."""
        template = self.env.get_template("metric_report.txt.jinja")
        return template.render(reports=list(reports))


@lru_cache(maxsize=1)
def get_renderer() -> StandoffRenderer:
    """A standoff renderer over the packaged templates."""
    return StandoffRenderer()
