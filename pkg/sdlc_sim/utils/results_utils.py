# Copyright 2019-2023 The Van Valen Lab at the California Institute of
# Technology (Caltech), with support from the Paul Allen Family Foundation,
# Google, & National Institutes of Health (NIH) under Grant U24CA224309-01.
# All rights reserved.
#
# Licensed under a modified Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.github.com/vanvalenlab/sdlc-sim/LICENSE
#
# The Work provided may be used for non-commercial academic purposes only.
# For any other use of the Work, including commercial use, please contact:
# vanvalenlab@gmail.com
#
# Neither the name of Caltech nor the names of its contributors may be used
# to endorse or promote products derived from this software without specific
# prior written permission.
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ==============================================================================

"""Utility functions for writing and displaying simulation results"""

import json
import os

from sdlc_sim.metrics import export_timeseries, summary_table


REPORT_FILENAME = 'report.json'
TIMESERIES_FILENAME = 'timeseries.csv'
SWEEP_FILENAME = 'sweep.csv'
OPTIMIZATION_FILENAME = 'optimization.json'


def _prepare(out_dir, filename):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, filename)


def write_report(report, out_dir):
    """Writes `report.json` into `out_dir`.

    Args:
        report (Report): Merged replications.
        out_dir (str): Output directory, created if missing.

    Returns:
        str: Path of the written file.
    """
    path = _prepare(out_dir, REPORT_FILENAME)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(report.to_json())
    return path


def write_timeseries(stats, out_dir):
    """Writes the pool series of one replication to `timeseries.csv`.

    Times are written in days with 6 decimal places.
    """
    path = _prepare(out_dir, TIMESERIES_FILENAME)
    export_timeseries(stats).to_csv(path, index=False, float_format='%.6f',
                                    lineterminator='\n')
    return path


def write_sweep(df_sweep, out_dir):
    path = _prepare(out_dir, SWEEP_FILENAME)
    df_sweep.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')
    return path


def write_optimization(result, out_dir):
    path = _prepare(out_dir, OPTIMIZATION_FILENAME)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(result.to_dict(), sort_keys=True, indent=2) + '\n')
    return path


def format_summary(report):
    """Renders the per-class and per-pool tables of `report` as text.

    The per-class table lists received and delivered projects and the ArT
    means; the per-pool table lists the time averages with a caption
    explaining what they measure.
    """
    df_classes, df_pools = summary_table(report)
    n = len(report.replications)
    lines = [
        'Replications: {}   Seed: {}'.format(n, report.seed),
        '',
        'Projects (mean over replications)',
        df_classes.to_string(float_format=lambda x: '{:.2f}'.format(x), na_rep='-'),
        '',
        'Resources (mean over replications)',
        df_pools.to_string(float_format=lambda x: '{:.2f}'.format(x), na_rep='-'),
        df_pools.attrs['caption'],
    ]
    return '\n'.join(lines) + '\n'
