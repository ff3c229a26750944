"""External MILP backends behind the problem/solution file contract.

A backend is a command template containing ``{problem}`` and ``{solution}``
placeholders.  The template comes from the caller or from the
``DISCRIMINATION_BACKEND_CMD`` environment variable.  Running this module
directly makes the built-in solver available behind the same contract::

    python -m discrimination.solver.backend PROBLEM SOLUTION
"""
import argparse
import logging
import os
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from ..errors import BackendError, BackendMissing
from .problem import SolverParams
from .textformat import read_problem, read_solution, write_problem, write_solution

logger = logging.getLogger(__name__)

BACKEND_ENV = "DISCRIMINATION_BACKEND_CMD"
BUILTIN_TEMPLATE = f"{shlex.quote(sys.executable)} -m discrimination.solver.backend {{problem}} {{solution}}"


def resolve_template(template=None):
    template = template or os.environ.get(BACKEND_ENV)
    if not template:
        raise BackendMissing(f"no backend command given and {BACKEND_ENV} is not set")
    if "{problem}" not in template or "{solution}" not in template:
        raise BackendError("backend command must contain {problem} and {solution}")
    return template


def external_backend_solve(problem, template=None, timeout=None, workdir=None):
    """Export ``problem``, run the backend command, and parse its solution file."""
    template = resolve_template(template)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        problem_path = Path(tmp) / "problem.txt"
        solution_path = Path(tmp) / "solution.txt"
        with open(problem_path, "w") as f:
            write_problem(problem, f)
        cmd = [part.format(problem=problem_path, solution=solution_path)
               for part in shlex.split(template)]
        if shutil.which(cmd[0]) is None and not Path(cmd[0]).exists():
            raise BackendMissing(f"backend executable not found: {cmd[0]}")

        logger.info("running backend: %s", " ".join(cmd))
        start = time.monotonic()
        try:
            result = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired:
            raise BackendError(f"backend timed out after {timeout} s")
        if result.returncode != 0:
            raise BackendError(f"backend failed with exit code {result.returncode}: {result.stderr.strip()}")
        if not solution_path.exists():
            raise BackendError("backend finished without writing a solution file")
        with open(solution_path) as f:
            solution = read_solution(f, problem.num_vars)
        solution.wall_time = time.monotonic() - start
    return solution


def main(argv=None):
    from ..logs import setup_logging
    from .branch_and_bound import solve_milp

    parser = argparse.ArgumentParser(description="Built-in MILP solver behind the file contract")
    parser.add_argument("problem", help="problem file to read")
    parser.add_argument("solution", help="solution file to write")
    parser.add_argument("--node-limit", type=int, default=None)
    parser.add_argument("--rel-gap", type=float, default=SolverParams.rel_gap)
    args = parser.parse_args(argv)

    setup_logging()
    with open(args.problem) as f:
        problem = read_problem(f)
    params = SolverParams(node_limit=args.node_limit, rel_gap=args.rel_gap)
    solution = solve_milp(problem, params)
    with open(args.solution, "w") as f:
        write_solution(solution, f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
