"""DiffSum ballot-polling risk-limiting audits.

The stopping rule, a BRAVO baseline, reproducible sampling, a Monte Carlo
simulator, and an event-sourced live-audit session service.
"""

from .bravo import (
    BravoParams,
    BravoState,
    bravo_decision,
    bravo_expected_size,
    bravo_update,
)
from .core import (
    AcceptOutcome,
    AuditParams,
    Continue,
    Decision,
    FullCountComplete,
    RecommendCutover,
    TallySnapshot,
    choose_c,
    decimal_digits,
    evaluate,
    expected_stop_size,
    max_error_rate,
    reduce_to_pair,
    stop_condition,
)
from .sampling import (
    BallotManifest,
    FixedStep,
    Geometric,
    PerBallot,
    SeededRng,
    draw_without_replacement,
    next_sample_size,
    synthetic_population,
)
from .session import (
    AuditEvent,
    AuditSession,
    CorruptLogError,
    DuplicateInterpretationError,
    SessionNotOpenError,
    UnknownBallotError,
    create_session,
    replay,
    session_status,
)
from .simulator import (
    BravoRule,
    DiffSumRule,
    SimulationConfig,
    SimulationReport,
    TrialOutcome,
    exhaustive_error_oracle,
    reproduce_delta_table,
    run_simulation,
    run_trial,
)

# the stopping rule under its long name, for symmetry with the docs
diffsum_stop_condition = stop_condition

__version__ = "0.1.0"
