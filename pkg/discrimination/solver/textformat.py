"""Line-oriented problem and solution files for replay against other solvers.

Problem file::

    PROBLEM <name>
    VAR <j> <name> <lb> <ub> <C|B>
    ROW <i> <name> <L|E> <rhs> <j>:<coef> ...
    SOS1 <g> <j> <j> ...
    OBJ <constant> <j>:<coef> ...
    QOBJ <j>:<coef> ...
    END

Solution file::

    STATUS <status>
    OBJECTIVE <value|nan>
    BOUND <value|nan>
    NODES <int>
    X <j>:<value> ...

Floats are written with ``repr`` so a round trip is exact.
"""
import math

import numpy as np
import scipy.sparse as sp

from ..errors import BackendParseError
from .problem import MilpProblem, MilpSolution, Status


def _fmt(value):
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def _pairs(tokens, where):
    out = []
    for tok in tokens:
        try:
            j, val = tok.split(":", 1)
            out.append((int(j), float(val)))
        except ValueError:
            raise BackendParseError(f"{where}: malformed index:value token {tok!r}")
    return out


def write_problem(problem, stream):
    stream.write(f"PROBLEM {problem.name}\n")
    for j in range(problem.num_vars):
        kind = "B" if problem.binary[j] else "C"
        stream.write(f"VAR {j} {problem.var_names[j]} {_fmt(problem.lower[j])} "
                     f"{_fmt(problem.upper[j])} {kind}\n")
    A = problem.A.tocsr()
    for i in range(problem.num_rows):
        start, end = A.indptr[i], A.indptr[i + 1]
        terms = " ".join(f"{j}:{_fmt(v)}" for j, v in zip(A.indices[start:end], A.data[start:end]))
        stream.write(f"ROW {i} {problem.row_names[i]} {problem.senses[i]} "
                     f"{_fmt(problem.rhs[i])} {terms}".rstrip() + "\n")
    for g, members in enumerate(problem.sos1):
        stream.write(f"SOS1 {g} " + " ".join(str(j) for j in members) + "\n")
    nz = np.flatnonzero(problem.cost)
    terms = " ".join(f"{j}:{_fmt(problem.cost[j])}" for j in nz)
    stream.write(f"OBJ {_fmt(problem.cost_constant)} {terms}".rstrip() + "\n")
    if problem.quadratic:
        terms = " ".join(f"{j}:{_fmt(c)}" for j, c in sorted(problem.quadratic.items()))
        stream.write(f"QOBJ {terms}\n")
    stream.write("END\n")


def read_problem(stream):
    name = None
    lower, upper, binary, var_names = [], [], [], []
    rows, cols, vals = [], [], []
    senses, rhs, row_names = [], [], []
    sos1 = []
    cost_terms, constant, quadratic = [], 0.0, None
    ended = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        key, args = tokens[0], tokens[1:]
        where = f"line {lineno}"
        try:
            if key == "PROBLEM":
                name = args[0] if args else "problem"
            elif key == "VAR":
                if int(args[0]) != len(lower):
                    raise BackendParseError(f"{where}: variables must be numbered consecutively")
                var_names.append(args[1])
                lower.append(float(args[2]))
                upper.append(float(args[3]))
                if args[4] not in ("C", "B"):
                    raise BackendParseError(f"{where}: variable kind must be C or B")
                binary.append(args[4] == "B")
            elif key == "ROW":
                i = int(args[0])
                if i != len(rhs):
                    raise BackendParseError(f"{where}: rows must be numbered consecutively")
                row_names.append(args[1])
                if args[2] not in ("L", "E"):
                    raise BackendParseError(f"{where}: row sense must be L or E")
                senses.append(args[2])
                rhs.append(float(args[3]))
                for j, v in _pairs(args[4:], where):
                    rows.append(i)
                    cols.append(j)
                    vals.append(v)
            elif key == "SOS1":
                sos1.append([int(j) for j in args[1:]])
            elif key == "OBJ":
                constant = float(args[0])
                cost_terms = _pairs(args[1:], where)
            elif key == "QOBJ":
                quadratic = dict(_pairs(args, where))
            elif key == "END":
                ended = True
                break
            else:
                raise BackendParseError(f"{where}: unknown record {key!r}")
        except (IndexError, ValueError) as exc:
            raise BackendParseError(f"{where}: {exc}")
    if name is None or not ended:
        raise BackendParseError("problem file lacks a PROBLEM header or END record")
    n = len(lower)
    if cols and max(cols) >= n:
        raise BackendParseError("row references an undeclared variable")
    cost = np.zeros(n)
    for j, v in cost_terms:
        cost[j] += v
    return MilpProblem(
        name=name,
        lower=np.array(lower), upper=np.array(upper),
        binary=np.array(binary, dtype=bool), var_names=var_names,
        A=sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), n)),
        senses=np.array(senses, dtype="<U1"), rhs=np.array(rhs),
        row_names=row_names, cost=cost, cost_constant=constant,
        sos1=sos1, quadratic=quadratic,
    )


def write_solution(solution, stream):
    status = Status(solution.status).value
    stream.write(f"STATUS {status}\n")
    objective = solution.objective if solution.x is not None else math.nan
    stream.write(f"OBJECTIVE {_fmt(objective)}\n")
    stream.write(f"BOUND {_fmt(solution.best_bound)}\n")
    stream.write(f"NODES {int(solution.nodes)}\n")
    if solution.x is not None:
        stream.write("X " + " ".join(f"{j}:{_fmt(v)}" for j, v in enumerate(solution.x)) + "\n")


def read_solution(stream, num_vars):
    fields = {}
    x = None
    for raw in stream:
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key == "X":
            x = np.zeros(num_vars)
            for j, v in _pairs(rest.split(), "solution"):
                if not 0 <= j < num_vars:
                    raise BackendParseError(f"solution references variable {j} out of range")
                x[j] = v
        elif key in ("STATUS", "OBJECTIVE", "BOUND", "NODES"):
            fields[key] = rest.strip()
        else:
            raise BackendParseError(f"unknown solution record {key!r}")
    if "STATUS" not in fields:
        raise BackendParseError("solution file has no STATUS record")
    try:
        status = Status(fields["STATUS"])
        objective = float(fields.get("OBJECTIVE", "nan"))
        bound = float(fields.get("BOUND", "nan"))
        nodes = int(fields.get("NODES", "0"))
    except ValueError as exc:
        raise BackendParseError(f"malformed solution header: {exc}")
    if math.isnan(objective):
        objective = math.inf
    return MilpSolution(status=status, objective=objective, x=x, best_bound=bound, nodes=nodes)
