import io
from datetime import datetime
from typing import Optional

import pandas as pd
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from qblue.config import CRLB_COLUMNS, SWEEP_COLUMNS
from qblue.models import CrlbRow, SweepModel, SweepResult


def sweep_to_frame(result: SweepResult, include_failures: bool = False) -> pd.DataFrame:
    """
    Flatten a sweep into the CSV schema.

    The sine model appends a ``phase`` column; ``include_failures`` appends
    ``failure_rate`` (spreadsheet export only).
    """
    columns = list(SWEEP_COLUMNS)
    if result.config.model == SweepModel.SINE3:
        columns.append("phase")
    if include_failures:
        columns.append("failure_rate")

    data = []
    for row in result.rows:
        record = row.model_dump()
        record["estimator"] = row.estimator.value
        data.append({c: record[c] for c in columns})
    return pd.DataFrame(data, columns=columns)


def crlb_to_frame(rows: list[CrlbRow]) -> pd.DataFrame:
    """CRLB rows as theta_over_delta, sqrt_crlb_over_delta."""
    return pd.DataFrame(
        [(r.theta_over_delta, r.sqrt_crlb_over_delta) for r in rows],
        columns=CRLB_COLUMNS,
    )


def generate_excel_report(
    df: pd.DataFrame,
    title: str,
    generated_at: datetime,
    summary: Optional[dict] = None,
) -> io.BytesIO:
    """
    Render a result table as a styled workbook.

    Args:
        df: Result table (sweep or CRLB)
        title: Title shown on the summary sheet
        generated_at: Timestamp of the run
        summary: Extra key/value pairs for the summary sheet

    Returns:
        BytesIO buffer containing the xlsx file
    """
    output = io.BytesIO()

    with pd.ExcelWriter(output, engine="openpyxl") as writer:
        df.to_excel(writer, sheet_name="Results", index=False)
        workbook = writer.book
        worksheet = writer.sheets["Results"]

        header_fill = PatternFill(start_color="1F4E79", end_color="1F4E79", fill_type="solid")
        header_font = Font(color="FFFFFF", bold=True)
        thin_border = Border(
            left=Side(style="thin"),
            right=Side(style="thin"),
            top=Side(style="thin"),
            bottom=Side(style="thin"),
        )

        for cell in worksheet[1]:
            cell.fill = header_fill
            cell.font = header_font
            cell.border = thin_border
            cell.alignment = Alignment(horizontal="center", vertical="center")

        # Orange for partial fallback, red when every record fell back
        fallback_colors = {
            "partial": PatternFill(start_color="FFA500", end_color="FFA500", fill_type="solid"),
            "all": PatternFill(start_color="FF0000", end_color="FF0000", fill_type="solid"),
        }
        fallback_col = (
            list(df.columns).index("fallback_rate") + 1 if "fallback_rate" in df.columns else None
        )

        for row_idx, row in enumerate(worksheet.iter_rows(min_row=2, max_row=len(df) + 1), start=2):
            for cell in row:
                cell.border = thin_border
                cell.alignment = Alignment(horizontal="center", vertical="center")

            if fallback_col is not None:
                cell = worksheet.cell(row=row_idx, column=fallback_col)
                if cell.value is not None and cell.value >= 1.0:
                    cell.fill = fallback_colors["all"]
                    cell.font = Font(color="FFFFFF", bold=True)
                elif cell.value:
                    cell.fill = fallback_colors["partial"]

        for col_idx, name in enumerate(df.columns, start=1):
            worksheet.column_dimensions[get_column_letter(col_idx)].width = max(12, len(name) + 4)

        worksheet.freeze_panes = "A2"

        summary_ws = workbook.create_sheet("Summary")
        summary_data = [
            [title],
            [""],
            ["Generated At:", generated_at.strftime("%Y-%m-%d %H:%M:%S %Z").strip()],
            ["Rows:", len(df)],
        ]
        for key, value in (summary or {}).items():
            summary_data.append([f"{key}:", value])

        for row_idx, row_data in enumerate(summary_data, start=1):
            for col_idx, value in enumerate(row_data, start=1):
                cell = summary_ws.cell(row=row_idx, column=col_idx, value=value)
                if row_idx == 1:
                    cell.font = Font(bold=True, size=14)
                elif col_idx == 1 and row_idx > 2:
                    cell.font = Font(bold=True)

        summary_ws.column_dimensions["A"].width = 20
        summary_ws.column_dimensions["B"].width = 30

    output.seek(0)
    return output
