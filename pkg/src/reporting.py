from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Mapping

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

LogEmit = Callable[[str], None]

HEADER_FILL = PatternFill(start_color="FF1F3B57", end_color="FF1F3B57", fill_type="solid")
HEADER_FONT = Font(bold=True, color="FFFFFFFF")
THIN = Side(style="thin", color="FF9E9E9E")
CELL_BORDER = Border(left=THIN, right=THIN, top=THIN, bottom=THIN)


def emit(log_emit: LogEmit | None, text: str):
    """Log helper that tolerates missing/failed callbacks."""
    if callable(log_emit):
        try:
            log_emit(text)
            return
        except Exception:
            pass
    print(text)


def ensure_unique_path(path: Path) -> Path:
    """Return a non-existing path by appending (n) before the extension if needed."""
    if not path.exists():
        return path
    stem = path.stem
    ext = path.suffix
    parent = path.parent
    counter = 1
    while True:
        candidate = parent / f"{stem} ({counter}){ext}"
        if not candidate.exists():
            return candidate
        counter += 1


def write_jsonl(path: Path, records: Iterable[Mapping]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")
    return path


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.6g", lineterminator="\n")
    return path


def write_workbook(sheets: Mapping[str, pd.DataFrame], path: Path) -> Path:
    """Styled, human-readable workbook: one sheet per table, bold header, auto-fit widths."""
    path.parent.mkdir(parents=True, exist_ok=True)
    wb = Workbook()
    wb.remove(wb.active)
    for title, df in sheets.items():
        ws = wb.create_sheet(title=title[:31])
        headers = [str(c) for c in df.columns]
        ws.append(headers)
        for row in df.itertuples(index=False):
            ws.append([_cell_value(v) for v in row])

        for cell in ws[1]:
            cell.fill = HEADER_FILL
            cell.font = HEADER_FONT
            cell.alignment = Alignment(horizontal="center", vertical="center")
        for row in ws.iter_rows(min_row=1, max_row=ws.max_row, max_col=len(headers)):
            for cell in row:
                cell.border = CELL_BORDER

        if headers:
            ws.freeze_panes = "A2"
            ws.auto_filter.ref = f"A1:{get_column_letter(len(headers))}1"

        # Auto-fit column widths, capped at 5.00 inches (~68 Excel width units)
        max_width_chars = int(round((5.0 * 96 - 5) / 7))
        dims: dict[int, int] = {}
        for row in ws.iter_rows(min_row=1, max_row=ws.max_row, max_col=len(headers)):
            for c_idx, cell in enumerate(row, start=1):
                if cell.value is not None:
                    dims[c_idx] = max(dims.get(c_idx, 0), len(str(cell.value)))
        for c_idx, w in dims.items():
            ws.column_dimensions[get_column_letter(c_idx)].width = min(max(w + 2, 8), max_width_chars)
    wb.save(path)
    return path


def _cell_value(v):
    if v is None:
        return None
    try:
        if pd.isna(v):
            return None
    except (TypeError, ValueError):
        pass
    if hasattr(v, "item"):
        return v.item()
    return v
