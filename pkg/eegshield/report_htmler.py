import logging
from pathlib import Path
from typing import Union

import markdown
from pyquery import PyQuery

from .error_handler import ReportError
from .evaluation import EvalReport

logger = logging.getLogger(__name__)

STYLES = {
    "section": "font-family: Helvetica, Arial, sans-serif; font-size: 14px; color: #333;",
    "h3": "font-size: 18px; margin: 24px 0 8px; border-left: 4px solid #2f6f9f; padding-left: 8px;",
    "table": "border-collapse: collapse; margin-bottom: 16px;",
    "th": "background: #2f6f9f; color: #fff; padding: 6px 12px; text-align: left;",
    "td": "border-bottom: 1px solid #ddd; padding: 6px 12px; text-align: right;",
    "td_label": "border-bottom: 1px solid #ddd; padding: 6px 12px; text-align: left;",
    "average": "font-weight: bold; background: #f2f6f9;",
}


class ReportHtmler:
    """将评估表格渲染为带内联样式的 HTML"""

    def __init__(self, title: str = "Evaluation summary"):
        self.title = title

    def render(self, report: EvalReport) -> str:
        """渲染评估报告为 HTML"""
        if not report.rows:
            raise ReportError("evaluation report has no rows to render")
        html_content = self.md_to_original_html(report.to_table())
        return self.__css_beautify(html_content)

    def md_to_original_html(self, content: str) -> str:
        """渲染 Markdown 内容为 HTML"""
        exts = ["markdown.extensions.tables", "markdown.extensions.sane_lists"]
        return markdown.markdown(content, extensions=exts)

    def __css_beautify(self, content: str) -> str:
        """为标题、表格和平均值行添加样式"""
        pq = PyQuery(f"<section>{content}</section>")
        pq("section").attr("style", STYLES["section"])
        pq("h3").attr("style", STYLES["h3"])
        pq("table").attr("style", STYLES["table"])
        pq("th").attr("style", STYLES["th"])
        for row in pq("tr").items():
            cells = row.children("td")
            if not len(cells):
                continue
            for i, cell in enumerate(cells.items()):
                cell.attr("style", STYLES["td_label"] if i < 2 else STYLES["td"])
            if cells.eq(0).text() == "Average":
                row.attr("style", STYLES["average"])
        body = pq.outer_html()
        return (f"<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{self.title}</title></head>"
                f"<body><h2>{self.title}</h2>\n{body}\n</body></html>\n")

    def write(self, report: EvalReport, path: Union[str, Path]) -> None:
        """写入 HTML 文件"""
        try:
            Path(path).write_text(self.render(report), encoding="utf-8")
        except OSError as e:
            raise ReportError(f"cannot write HTML summary to {path}: {e}")
        logger.info(f"Wrote HTML summary to {path}")
