# regularity_lab/app/experiments/__init__.py
from typing import Callable, Dict

from regularity_lab.app.experiments.base import ExperimentOutput
from regularity_lab.app.experiments.euler import run_euler_conservation, run_euler_decay
from regularity_lab.app.experiments.flows import run_flow_regularity, run_holder, run_semigroup
from regularity_lab.app.experiments.patchwork import run_patchwork_growth, run_schedule_table
from regularity_lab.app.experiments.selftest import run_norm_selftest
from regularity_lab.app.experiments.transport import run_transport_decay
from regularity_lab.app.models.schemas import ExperimentConfig, ExperimentKind

RUNNERS: Dict[ExperimentKind, Callable[[ExperimentConfig], ExperimentOutput]] = {
    ExperimentKind.FLOW_REGULARITY: run_flow_regularity,
    ExperimentKind.HOLDER: run_holder,
    ExperimentKind.SEMIGROUP: run_semigroup,
    ExperimentKind.TRANSPORT_DECAY: run_transport_decay,
    ExperimentKind.PATCHWORK_GROWTH: run_patchwork_growth,
    ExperimentKind.SCHEDULE_TABLE: run_schedule_table,
    ExperimentKind.EULER_DECAY: run_euler_decay,
    ExperimentKind.EULER_CONSERVATION: run_euler_conservation,
    ExperimentKind.NORM_SELFTEST: run_norm_selftest,
}
