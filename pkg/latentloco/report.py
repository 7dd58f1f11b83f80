"""
Evaluation reports and training progress files.

A report is one row per clip in a fixed column order, written both as CSV
and as a JSON array mirroring the rows. A non-empty report ends with an
aggregate row holding the column means.
"""

import csv
import json
import logging
import math
import os
from collections import OrderedDict


logger = logging.getLogger(__name__)


ROW_COLUMNS = ('clip_id', 'label', 'succ', 'reason', 'e_mpjpe', 'e_mpkpe',
               'steps')
TIMING_COLUMNS = ('t_generation', 't_decode', 't_retarget', 't_control')
TIMING_REPORT_COLUMNS = ('mode', 'trial') + TIMING_COLUMNS + ('t_total',)
AGGREGATE_ID = 'aggregate'


class ReportError(RuntimeError):
    pass


def format_value(value):
    if hasattr(value, 'item'):
        value = value.item()
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ''
        return float('{:.10g}'.format(value))
    return value


def report_columns(record_timings=False):
    return ROW_COLUMNS + (TIMING_COLUMNS if record_timings else ())


def _mean(values):
    values = [float(v) for v in values if v not in ('', None)]
    if not values:
        return ''
    return sum(values) / len(values)


def aggregate(rows, columns):
    block = OrderedDict((name, '') for name in columns)
    block['clip_id'] = AGGREGATE_ID
    for name in columns:
        if name == 'succ' or name.startswith('e_') or name.startswith('t_'):
            block[name] = format_value(_mean(row[name] for row in rows))
    block['steps'] = format_value(_mean(row['steps'] for row in rows))
    return block


def build_rows(records, record_timings=False):
    columns = report_columns(record_timings)
    rows = []
    for record in records:
        row = OrderedDict()
        for name in columns:
            row[name] = format_value(record.get(name, ''))
        rows.append(row)
    return columns, rows


def table_emit(rows, columns, out_dir, name):
    """Write `<name>.csv` and `<name>.json` under `out_dir`; return both paths."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, name + '.csv')
        json_path = os.path.join(out_dir, name + '.json')
        with open(csv_path, 'w', newline='', encoding='utf-8') as handle:
            writer = csv.DictWriter(handle, fieldnames=columns,
                                    lineterminator='\n')
            writer.writeheader()
            writer.writerows(rows)
        with open(json_path, 'w', encoding='utf-8') as handle:
            json.dump(rows, handle, indent=2)
            handle.write('\n')
    except OSError as error:
        raise ReportError('Cannot Write Report To {}: {}.'.format(
            out_dir, error.strerror or error))
    logger.info('report rows=%d csv=%s', len(rows), csv_path)
    return csv_path, json_path


def report_emit(records, out_dir, name='report', record_timings=False):
    columns, rows = build_rows(records, record_timings)
    if rows:
        rows = rows + [aggregate(rows, columns)]
    return table_emit(rows, columns, out_dir, name)


def timing_emit(rows, out_dir, name='timing'):
    """
    One row per (mode, trial) with stage seconds, then one mean row per
    mode. Stages a mode does not run stay empty.
    """
    table = []
    for row in rows:
        line = OrderedDict((column, '') for column in TIMING_REPORT_COLUMNS)
        for column in TIMING_REPORT_COLUMNS:
            if column in row:
                line[column] = format_value(row[column])
        table.append(line)
    for mode in sorted({line['mode'] for line in table}):
        members = [line for line in table if line['mode'] == mode]
        block = OrderedDict((column, '') for column in TIMING_REPORT_COLUMNS)
        block['mode'] = mode
        block['trial'] = AGGREGATE_ID
        for column in TIMING_REPORT_COLUMNS[2:]:
            block[column] = format_value(
                _mean(line[column] for line in members))
        table.append(block)
    return table_emit(table, TIMING_REPORT_COLUMNS, out_dir, name)


def load_report(path):
    with open(path, encoding='utf-8') as handle:
        return json.load(handle)


class ProgressLog:

    """CSV progress rows; the first row fixes the columns."""

    def __init__(self, path):
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.path = path
        self._handle = open(path, 'w', newline='', encoding='utf-8')
        self._writer = None

    def write(self, row):
        if self._writer is None:
            self._writer = csv.DictWriter(
                self._handle, fieldnames=list(row), restval='',
                extrasaction='ignore', lineterminator='\n')
            self._writer.writeheader()
        self._writer.writerow({k: format_value(v) for k, v in row.items()})
        self._handle.flush()

    def close(self):
        if not self._handle.closed:
            self._handle.close()
