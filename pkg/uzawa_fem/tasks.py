from celery import shared_task
import logging

from .exceptions import MinResError
from .experiments import CaseSpec, failure_row, run_case, study_row, write_diagnostics

logger = logging.getLogger(__name__)


@shared_task
def run_case_task(spec, record_timings=False):
    """Run one study case; a failing case yields a failure row instead of an error"""
    case = CaseSpec(**spec)
    try:
        result = run_case(case)
    except MinResError as e:
        logger.error(f"Study case N={case.N} M={case.M} failed: {e}")
        write_diagnostics(case.out_dir, case, e)
        return failure_row(case)

    logger.info(f"Study case N={case.N} M={case.M} finished in {result.state.k} iterations")
    return study_row(result, record_timings)
