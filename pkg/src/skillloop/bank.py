"""Deterministic bank-operations task environment.

A small standard-operating-procedure world: a tool registry across five
categories (authentication, account, credit, currency, admin), constraint
rules, per-task prerequisite graphs, and a five-criterion boolean oracle.
Everything is a pure function of world state and arguments, so episodes
replay bit-identically.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .evidence import ExecutionTrace, FaultCategory, TurnKind

CORPUS_SCHEMA_VERSION = 1

CATEGORIES = ("authentication", "account", "credit", "currency", "admin")


class ToolFailure(Exception):
    """Domain-level tool failure (unknown entity, bad credential, ...)."""


# ---------------------------------------------------------------------------
# World state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldState:
    """Typed tables; equality is structural via content hash."""

    accounts: Mapping[str, Mapping] = field(default_factory=dict)
    balances: Mapping[str, int] = field(default_factory=dict)
    credit_apps: Mapping[str, Mapping] = field(default_factory=dict)
    fx_rates: Mapping[str, float] = field(default_factory=dict)
    sessions: Mapping[str, bool] = field(default_factory=dict)
    credentials: Mapping[str, str] = field(default_factory=dict)

    TABLES = ("accounts", "balances", "credit_apps", "fx_rates", "sessions", "credentials")

    def tables(self) -> dict[str, dict]:
        return {name: copy.deepcopy(dict(getattr(self, name))) for name in self.TABLES}

    def content_hash(self, exclude: Iterable[str] = ()) -> str:
        skip = set(exclude)
        data = {name: table for name, table in self.tables().items() if name not in skip}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def mutate(self, **updates) -> "WorldState":
        return replace(self, **updates)

    def to_json_dict(self) -> dict:
        return self.tables()


def state_from_json_dict(data: Mapping) -> WorldState:
    return WorldState(**{name: data.get(name, {}) for name in WorldState.TABLES})


# ---------------------------------------------------------------------------
# Tools
# ---------------------------------------------------------------------------

Effect = Callable[[WorldState, Mapping], tuple[WorldState, Mapping]]


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type_tag: str  # text | number | boolean | record | list
    required: bool = True


@dataclass(frozen=True)
class ToolDef:
    name: str
    category: str
    params: tuple[ParamSpec, ...]
    effect: Effect
    is_action: bool

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown tool category {self.category!r}")


_TYPE_CHECKS = {
    "text": lambda v: isinstance(v, str),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "record": lambda v: isinstance(v, dict),
    "list": lambda v: isinstance(v, list),
}


@dataclass(frozen=True)
class ToolRegistry:
    tools: Mapping[str, ToolDef]

    def __post_init__(self):
        for name, tool in self.tools.items():
            if name != tool.name:
                raise ValueError(f"registry key {name!r} != tool name {tool.name!r}")

    def __contains__(self, name: str) -> bool:
        return name in self.tools

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self.tools))

    def category_of(self, name: str) -> str:
        return self.tools[name].category

    def categories_map(self) -> dict[str, str]:
        return {name: tool.category for name, tool in self.tools.items()}

    def by_category(self, category: str) -> tuple[str, ...]:
        return tuple(sorted(n for n, t in self.tools.items() if t.category == category))

    def action_names(self) -> tuple[str, ...]:
        return tuple(sorted(n for n, t in self.tools.items() if t.is_action))


def _require_account(state: WorldState, account_id) -> None:
    if account_id not in state.accounts:
        raise ToolFailure(f"unknown account {account_id!r}")


def _require_app(state: WorldState, app_id) -> None:
    if app_id not in state.credit_apps:
        raise ToolFailure(f"unknown credit application {app_id!r}")


def _set(table: Mapping, key, value) -> dict:
    out = copy.deepcopy(dict(table))
    out[key] = value
    return out


def _update(table: Mapping, key, **fields) -> dict:
    out = copy.deepcopy(dict(table))
    out[key] = {**out[key], **fields}
    return out


def _login(state, args):
    user = args["user_id"]
    if state.credentials.get(user) != args["pin"]:
        raise ToolFailure(f"bad credentials for {user!r}")
    return state.mutate(sessions=_set(state.sessions, user, True)), {"authenticated": user}


def _logout(state, args):
    user = args["user_id"]
    if user not in state.sessions:
        raise ToolFailure(f"no session for {user!r}")
    return state.mutate(sessions=_set(state.sessions, user, False)), {"logged_out": user}


def _verify_identity(state, args):
    user = args["user_id"]
    known = user in state.credentials
    return state, {"user_id": user, "verified": known}


def _reset_pin(state, args):
    user = args["user_id"]
    if user not in state.credentials:
        raise ToolFailure(f"unknown user {user!r}")
    return state.mutate(credentials=_set(state.credentials, user, args["new_pin"])), {
        "user_id": user,
        "pin_reset": True,
    }


def _get_account(state, args):
    _require_account(state, args["account_id"])
    return state, {"account": dict(state.accounts[args["account_id"]])}


def _get_balance(state, args):
    _require_account(state, args["account_id"])
    return state, {"account_id": args["account_id"], "balance": state.balances[args["account_id"]]}


def _open_account(state, args):
    acct = args["account_id"]
    if acct in state.accounts:
        raise ToolFailure(f"account {acct!r} already exists")
    accounts = _set(
        state.accounts, acct, {"owner": args["user_id"], "type": args["type"], "status": "active"}
    )
    return state.mutate(accounts=accounts, balances=_set(state.balances, acct, 0)), {
        "account_id": acct,
        "opened": True,
    }


def _deposit(state, args):
    acct = args["account_id"]
    _require_account(state, acct)
    balances = _set(state.balances, acct, state.balances[acct] + int(args["amount"]))
    return state.mutate(balances=balances), {"account_id": acct, "balance": balances[acct]}


def _withdraw(state, args):
    acct = args["account_id"]
    _require_account(state, acct)
    balances = _set(state.balances, acct, state.balances[acct] - int(args["amount"]))
    return state.mutate(balances=balances), {"account_id": acct, "balance": balances[acct]}


def _transfer(state, args):
    src, dst = args["from_account"], args["to_account"]
    _require_account(state, src)
    _require_account(state, dst)
    amount = int(args["amount"])
    balances = copy.deepcopy(dict(state.balances))
    balances[src] -= amount
    balances[dst] += amount
    return state.mutate(balances=balances), {"from": src, "to": dst, "amount": amount}


def _submit_credit_application(state, args):
    app = args["app_id"]
    if app in state.credit_apps:
        raise ToolFailure(f"application {app!r} already exists")
    _require_account(state, args["account_id"])
    apps = _set(
        state.credit_apps,
        app,
        {
            "account_id": args["account_id"],
            "income_verified": False,
            "score": None,
            "limit": None,
            "status": "submitted",
        },
    )
    return state.mutate(credit_apps=apps), {"app_id": app, "status": "submitted"}


def _verify_income(state, args):
    app = args["app_id"]
    _require_app(state, app)
    return state.mutate(credit_apps=_update(state.credit_apps, app, income_verified=True)), {
        "app_id": app,
        "income_verified": True,
    }


def _get_credit_score(state, args):
    app = args["app_id"]
    _require_app(state, app)
    owner = state.credit_apps[app]["account_id"]
    score = 600 + int(hashlib.blake2s(owner.encode(), digest_size=2).hexdigest(), 16) % 201
    return state.mutate(credit_apps=_update(state.credit_apps, app, score=score)), {
        "app_id": app,
        "score": score,
    }


def _set_credit_limit(state, args):
    app = args["app_id"]
    _require_app(state, app)
    limit = int(args["limit"])
    return state.mutate(credit_apps=_update(state.credit_apps, app, limit=limit)), {
        "app_id": app,
        "limit": limit,
    }


def _approve_credit(state, args):
    app = args["app_id"]
    _require_app(state, app)
    return state.mutate(credit_apps=_update(state.credit_apps, app, status="approved")), {
        "app_id": app,
        "status": "approved",
    }


def _get_application(state, args):
    _require_app(state, args["app_id"])
    return state, {"application": dict(state.credit_apps[args["app_id"]])}


def _get_fx_rate(state, args):
    pair = args["pair"]
    if pair not in state.fx_rates:
        raise ToolFailure(f"unknown currency pair {pair!r}")
    return state, {"pair": pair, "rate": state.fx_rates[pair]}


def _convert_currency(state, args):
    src, dst, pair = args["from_account"], args["to_account"], args["pair"]
    _require_account(state, src)
    _require_account(state, dst)
    if pair not in state.fx_rates:
        raise ToolFailure(f"unknown currency pair {pair!r}")
    amount = int(args["amount"])
    converted = int(amount * state.fx_rates[pair])
    balances = copy.deepcopy(dict(state.balances))
    balances[src] -= amount
    balances[dst] += converted
    return state.mutate(balances=balances), {"converted": converted, "pair": pair}


def _freeze_account(state, args):
    acct = args["account_id"]
    _require_account(state, acct)
    return state.mutate(accounts=_update(state.accounts, acct, status="frozen")), {
        "account_id": acct,
        "status": "frozen",
    }


def _unfreeze_account(state, args):
    acct = args["account_id"]
    _require_account(state, acct)
    return state.mutate(accounts=_update(state.accounts, acct, status="active")), {
        "account_id": acct,
        "status": "active",
    }


def _audit_log(state, args):
    acct = args["account_id"]
    _require_account(state, acct)
    return state, {
        "account_id": acct,
        "status": state.accounts[acct]["status"],
        "balance": state.balances.get(acct),
    }


def _p(*specs: tuple[str, str]) -> tuple[ParamSpec, ...]:
    return tuple(ParamSpec(name, tag) for name, tag in specs)


def default_registry() -> ToolRegistry:
    tools = [
        ToolDef("login", "authentication", _p(("user_id", "text"), ("pin", "text")), _login, True),
        ToolDef("logout", "authentication", _p(("user_id", "text")), _logout, True),
        ToolDef(
            "verify_identity",
            "authentication",
            _p(("user_id", "text"), ("code", "text")),
            _verify_identity,
            False,
        ),
        ToolDef(
            "reset_pin",
            "authentication",
            _p(("user_id", "text"), ("new_pin", "text")),
            _reset_pin,
            True,
        ),
        ToolDef("get_account", "account", _p(("account_id", "text")), _get_account, False),
        ToolDef("get_balance", "account", _p(("account_id", "text")), _get_balance, False),
        ToolDef(
            "open_account",
            "account",
            _p(("user_id", "text"), ("account_id", "text"), ("type", "text")),
            _open_account,
            True,
        ),
        ToolDef(
            "deposit", "account", _p(("account_id", "text"), ("amount", "number")), _deposit, True
        ),
        ToolDef(
            "withdraw", "account", _p(("account_id", "text"), ("amount", "number")), _withdraw, True
        ),
        ToolDef(
            "transfer",
            "account",
            _p(("from_account", "text"), ("to_account", "text"), ("amount", "number")),
            _transfer,
            True,
        ),
        ToolDef(
            "submit_credit_application",
            "credit",
            _p(("account_id", "text"), ("app_id", "text")),
            _submit_credit_application,
            True,
        ),
        ToolDef("verify_income", "credit", _p(("app_id", "text")), _verify_income, True),
        ToolDef("get_credit_score", "credit", _p(("app_id", "text")), _get_credit_score, True),
        ToolDef(
            "set_credit_limit",
            "credit",
            _p(("app_id", "text"), ("limit", "number")),
            _set_credit_limit,
            True,
        ),
        ToolDef("approve_credit", "credit", _p(("app_id", "text")), _approve_credit, True),
        ToolDef("get_application", "credit", _p(("app_id", "text")), _get_application, False),
        ToolDef("get_fx_rate", "currency", _p(("pair", "text")), _get_fx_rate, False),
        ToolDef(
            "convert_currency",
            "currency",
            _p(
                ("from_account", "text"),
                ("to_account", "text"),
                ("amount", "number"),
                ("pair", "text"),
            ),
            _convert_currency,
            True,
        ),
        ToolDef("freeze_account", "admin", _p(("account_id", "text")), _freeze_account, True),
        ToolDef("unfreeze_account", "admin", _p(("account_id", "text")), _unfreeze_account, True),
        ToolDef("audit_log", "admin", _p(("account_id", "text")), _audit_log, False),
    ]
    return ToolRegistry({t.name: t for t in tools})


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CallRequest:
    tool: str
    args: Mapping


@dataclass(frozen=True)
class ConstraintRule:
    id: str
    description: str
    violates: Callable[[WorldState, CallRequest, ToolRegistry], bool]


def _owner_of_call(state: WorldState, call: CallRequest) -> str | None:
    args = call.args
    if "user_id" in args:
        return args["user_id"]
    for key in ("account_id", "from_account"):
        acct = args.get(key)
        if acct in state.accounts:
            return state.accounts[acct]["owner"]
    app = args.get("app_id")
    if app in state.credit_apps:
        acct = state.credit_apps[app]["account_id"]
        if acct in state.accounts:
            return state.accounts[acct]["owner"]
    return None


def _auth_required(state, call, registry):
    tool = registry.tools.get(call.tool)
    if tool is None or not tool.is_action or call.tool == "login":
        return False
    owner = _owner_of_call(state, call)
    if owner is None:
        return False
    return not state.sessions.get(owner, False)


def _positive_amount(state, call, registry):
    for key in ("amount", "limit"):
        if key in call.args:
            value = call.args[key]
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value <= 0:
                return True
    return False


def _sufficient_funds(state, call, registry):
    if call.tool == "withdraw":
        acct, amount = call.args.get("account_id"), call.args.get("amount", 0)
    elif call.tool in ("transfer", "convert_currency"):
        acct, amount = call.args.get("from_account"), call.args.get("amount", 0)
    else:
        return False
    if acct not in state.balances or not isinstance(amount, (int, float)):
        return False
    return state.balances[acct] < amount


_MUTATES_ACCOUNT = {"deposit", "withdraw", "transfer", "convert_currency"}


def _active_account(state, call, registry):
    if call.tool not in _MUTATES_ACCOUNT:
        return False
    for key in ("account_id", "from_account", "to_account"):
        acct = call.args.get(key)
        if acct in state.accounts and state.accounts[acct]["status"] == "frozen":
            return True
    return False


def _known_rate(state, call, registry):
    if call.tool != "convert_currency":
        return False
    return call.args.get("pair") not in state.fx_rates


def default_constraints() -> dict[str, ConstraintRule]:
    rules = [
        ConstraintRule(
            "auth_required",
            "mutating operations require an authenticated session for the affected owner",
            _auth_required,
        ),
        ConstraintRule("positive_amount", "amounts and limits must be positive", _positive_amount),
        ConstraintRule(
            "sufficient_funds", "withdrawals and transfers must not overdraw", _sufficient_funds
        ),
        ConstraintRule(
            "active_account", "frozen accounts accept no balance mutations", _active_account
        ),
        ConstraintRule(
            "known_rate", "currency conversion requires a known rate", _known_rate
        ),
    ]
    return {r.id: r for r in rules}


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrerequisiteGraph:
    """DAG over action names; edge (a, b) means a must succeed before b."""

    edges: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self):
        nodes = {n for edge in self.edges for n in edge}
        indeg = {n: 0 for n in nodes}
        for _, dst in self.edges:
            indeg[dst] += 1
        ready = [n for n, d in indeg.items() if d == 0]
        seen = 0
        while ready:
            node = ready.pop()
            seen += 1
            for src, dst in self.edges:
                if src == node:
                    indeg[dst] -= 1
                    if indeg[dst] == 0:
                        ready.append(dst)
        if seen != len(nodes):
            raise ValueError("prerequisite graph is cyclic")

    def prerequisites_of(self, action: str) -> tuple[str, ...]:
        return tuple(sorted(src for src, dst in self.edges if dst == action))


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    category: str
    initial: WorldState
    goal: str
    target_action: tuple[str, Mapping]
    expected_final: WorldState
    constraint_ids: tuple[str, ...]
    prerequisites: PrerequisiteGraph
    golden_calls: tuple[tuple[str, Mapping], ...] = ()
    turn_limit: int = 20
    action_limit: int = 10
    ignore_tables: tuple[str, ...] = ()

    def __post_init__(self):
        if self.turn_limit <= 0 or self.action_limit <= 0:
            raise ValueError("budgets must be positive")


@dataclass(frozen=True)
class OracleVerdict:
    c1_no_tool_errors: bool
    c2_no_constraint_violations: bool
    c3_database_match: bool
    c4_prerequisites_satisfied: bool
    c5_target_action_correct: bool

    @property
    def passed(self) -> bool:
        return (
            self.c1_no_tool_errors
            and self.c2_no_constraint_violations
            and self.c3_database_match
            and self.c4_prerequisites_satisfied
            and self.c5_target_action_correct
        )

    def to_json_dict(self) -> dict:
        return {
            "c1_no_tool_errors": self.c1_no_tool_errors,
            "c2_no_constraint_violations": self.c2_no_constraint_violations,
            "c3_database_match": self.c3_database_match,
            "c4_prerequisites_satisfied": self.c4_prerequisites_satisfied,
            "c5_target_action_correct": self.c5_target_action_correct,
            "pass": self.passed,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "OracleVerdict":
        return cls(
            data["c1_no_tool_errors"],
            data["c2_no_constraint_violations"],
            data["c3_database_match"],
            data["c4_prerequisites_satisfied"],
            data["c5_target_action_correct"],
        )


@dataclass(frozen=True)
class BankEnv:
    """Bundle of registry, constraint definitions, and a task corpus."""

    registry: ToolRegistry
    constraints: Mapping[str, ConstraintRule]
    tasks: tuple[TaskSpec, ...]

    def constraints_for(self, task: TaskSpec) -> list[ConstraintRule]:
        return [self.constraints[cid] for cid in task.constraint_ids]

    def task(self, task_id: str) -> TaskSpec:
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise KeyError(task_id)


# ---------------------------------------------------------------------------
# Tool call execution (shared by runtime and replay)
# ---------------------------------------------------------------------------


def execute_call(
    env: BankEnv,
    task: TaskSpec,
    state: WorldState,
    tool_name: str,
    args: Mapping,
) -> tuple[WorldState, Mapping]:
    """Validate and apply one tool call.  Returns the (possibly unchanged)
    state and a result mapping: ``{"ok": payload}`` on success, otherwise
    ``{"error": {"category", "detail", ...}}`` with category ``tool_error``
    (schema/domain failures) or ``constraint_violation``."""
    tool = env.registry.tools.get(tool_name)
    if tool is None:
        return state, {
            "error": {"category": "tool_error", "detail": f"unknown tool {tool_name!r}"}
        }
    for param in tool.params:
        if param.required and param.name not in args:
            return state, {
                "error": {
                    "category": "tool_error",
                    "detail": f"missing required argument {param.name!r}",
                }
            }
        if param.name in args and not _TYPE_CHECKS[param.type_tag](args[param.name]):
            return state, {
                "error": {
                    "category": "tool_error",
                    "detail": f"argument {param.name!r} must be {param.type_tag}",
                }
            }
    unknown = sorted(set(args) - {p.name for p in tool.params})
    if unknown:
        return state, {
            "error": {"category": "tool_error", "detail": f"unexpected arguments {unknown}"}
        }
    call = CallRequest(tool_name, args)
    for rule in env.constraints_for(task):
        if rule.violates(state, call, env.registry):
            return state, {
                "error": {
                    "category": "constraint_violation",
                    "constraint": rule.id,
                    "detail": rule.description,
                }
            }
    try:
        new_state, payload = tool.effect(state, args)
    except ToolFailure as exc:
        return state, {"error": {"category": "tool_error", "detail": str(exc)}}
    return new_state, {"ok": payload}


def replay_trace(env: BankEnv, task: TaskSpec, trace: ExecutionTrace) -> WorldState:
    """Re-apply every recorded tool call from the task's initial state."""
    state = task.initial
    for turn in trace.tool_calls():
        state, _ = execute_call(env, task, state, turn.tool_call.tool, turn.tool_call.args)
    return state


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def _args_match(pattern: Mapping, args: Mapping) -> bool:
    return all(args.get(k) == v for k, v in pattern.items())


def evaluate_oracle(
    env: BankEnv, task: TaskSpec, trace: ExecutionTrace, final_state: WorldState
) -> OracleVerdict:
    """Five-criterion verdict over a finished episode.

    c1: no schema/domain tool errors (constraint rejections count under c2
    only); c2: no constraint violations; c3: final state hash matches the
    expected state, minus the task's ignored tables; c4: every successfully
    executed action's prerequisites completed successfully earlier; c5: the
    target action ran successfully with arguments matching the pattern.
    """
    if trace.task_id != task.task_id:
        raise ValueError(f"trace {trace.trace_id} is for task {trace.task_id}, not {task.task_id}")

    c1 = True
    c2 = True
    completed: list[str] = []
    c5 = False
    target_tool, target_pattern = task.target_action
    c4 = True

    for turn in trace.turns:
        if turn.fault is not None and turn.fault.category is FaultCategory.TOOL_ERROR:
            c1 = False
        if turn.fault is not None and turn.fault.category is FaultCategory.CONSTRAINT_VIOLATION:
            c2 = False
        if turn.kind is not TurnKind.TOOL_CALL:
            continue
        record = turn.tool_call
        if record.failed:
            category = record.error_category
            if category == "constraint_violation":
                c2 = False
            else:
                c1 = False
            continue
        tool = env.registry.tools.get(record.tool)
        if tool is not None and tool.is_action:
            for prereq in task.prerequisites.prerequisites_of(record.tool):
                if prereq not in completed:
                    c4 = False
            completed.append(record.tool)
        if record.tool == target_tool and _args_match(target_pattern, record.args):
            c5 = True

    c3 = final_state.content_hash(task.ignore_tables) == task.expected_final.content_hash(
        task.ignore_tables
    )
    return OracleVerdict(c1, c2, c3, c4, c5)


def pass_rate(verdicts: Sequence[OracleVerdict]) -> float:
    if not verdicts:
        raise ValueError("pass_rate of an empty verdict list is undefined")
    return sum(1 for v in verdicts if v.passed) / len(verdicts)


# ---------------------------------------------------------------------------
# Seeded splitting and sampling
# ---------------------------------------------------------------------------


class Lcg:
    """Portable 32-bit linear congruential generator.

    state' = (1664525 * state + 1013904223) mod 2**32, seeded directly with
    the given integer.  Documented so seeded splits reproduce bit-exactly in
    any implementation.
    """

    MULTIPLIER = 1664525
    INCREMENT = 1013904223
    MODULUS = 2**32

    def __init__(self, seed: int):
        self.state = seed % self.MODULUS

    def next(self) -> int:
        self.state = (self.MULTIPLIER * self.state + self.INCREMENT) % self.MODULUS
        return self.state

    def shuffle(self, items: list) -> None:
        """Fisher-Yates, descending, j = next() % (i + 1)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next() % (i + 1)
            items[i], items[j] = items[j], items[i]


def _largest_remainder_quotas(sizes: Mapping[str, int], total: int) -> dict[str, int]:
    n = sum(sizes.values())
    exact = {cat: total * size / n for cat, size in sizes.items()}
    quotas = {cat: int(exact[cat]) for cat in sizes}
    leftover = total - sum(quotas.values())
    by_fraction = sorted(sizes, key=lambda cat: (-(exact[cat] - quotas[cat]), cat))
    for cat in by_fraction[:leftover]:
        quotas[cat] += 1
    return quotas


def _stratified_take(
    tasks: Sequence[TaskSpec], count: int, seed: int
) -> tuple[list[TaskSpec], list[TaskSpec]]:
    by_category: dict[str, list[TaskSpec]] = {}
    for task in tasks:
        by_category.setdefault(task.category, []).append(task)
    for bucket in by_category.values():
        bucket.sort(key=lambda t: t.task_id)
    categories = sorted(c for c in by_category if by_category[c])
    quotas = _largest_remainder_quotas(
        {c: len(by_category[c]) for c in categories}, count
    )
    rng = Lcg(seed)
    taken: list[TaskSpec] = []
    rest: list[TaskSpec] = []
    for category in categories:
        bucket = by_category[category]
        rng.shuffle(bucket)
        taken.extend(bucket[: quotas[category]])
        rest.extend(bucket[quotas[category] :])
    taken.sort(key=lambda t: t.task_id)
    rest.sort(key=lambda t: t.task_id)
    return taken, rest


def split_tasks(
    tasks: Sequence[TaskSpec], val_size: int, seed: int
) -> tuple[list[TaskSpec], list[TaskSpec]]:
    """Deterministic stratified validation/test split: per sorted category,
    shuffle with the documented LCG and allocate proportionally to val_size
    with largest-remainder rounding."""
    if val_size <= 0:
        raise ValueError("val_size must be positive")
    if val_size >= len(tasks):
        raise ValueError("val_size must be smaller than the task list")
    return _stratified_take(tasks, val_size, seed)


def sample_batch(validation: Sequence[TaskSpec], batch_size: int, seed: int) -> list[TaskSpec]:
    """Stratified sample without replacement from the validation split, using
    the same generator as split_tasks."""
    if batch_size > len(validation):
        raise ValueError("batch_size exceeds the validation set")
    taken, _ = _stratified_take(validation, batch_size, seed)
    return taken


# ---------------------------------------------------------------------------
# Bundled corpus
# ---------------------------------------------------------------------------


def _base_world() -> WorldState:
    return WorldState(
        accounts={
            "A1": {"owner": "u1", "type": "checking", "status": "active"},
            "A2": {"owner": "u1", "type": "savings", "status": "active"},
            "A3": {"owner": "u2", "type": "checking", "status": "active"},
            "A4": {"owner": "u2", "type": "savings", "status": "frozen"},
        },
        balances={"A1": 500, "A2": 1200, "A3": 60, "A4": 40},
        credit_apps={},
        fx_rates={"USD/EUR": 0.9, "USD/GBP": 0.8, "EUR/USD": 1.1},
        sessions={"u1": False, "u2": False},
        credentials={"u1": "1111", "u2": "2222"},
    )


def apply_calls(
    env: BankEnv, task: TaskSpec, calls: Sequence[tuple[str, Mapping]]
) -> WorldState:
    state = task.initial
    for tool, args in calls:
        state, result = execute_call(env, task, state, tool, args)
        if "error" in result:
            raise ValueError(
                f"golden call {tool} failed while building {task.task_id}: {result['error']}"
            )
    return state


_ALL_CONSTRAINTS = ("auth_required", "positive_amount", "sufficient_funds", "active_account", "known_rate")


def _task(
    env_registry: ToolRegistry,
    constraints: Mapping[str, ConstraintRule],
    task_id: str,
    category: str,
    goal: str,
    golden: Sequence[tuple[str, Mapping]],
    target: tuple[str, Mapping],
    prereq_edges: Iterable[tuple[str, str]] = (),
    initial: WorldState | None = None,
    ignore_tables: tuple[str, ...] = (),
) -> TaskSpec:
    initial = initial or _base_world()
    prereqs = PrerequisiteGraph(frozenset(prereq_edges))
    for edge in prereqs.edges:
        for name in edge:
            if name not in env_registry.tools:
                raise ValueError(f"prerequisite names unknown tool {name!r}")
    draft = TaskSpec(
        task_id=task_id,
        category=category,
        initial=initial,
        goal=goal,
        target_action=target,
        expected_final=initial,  # placeholder, replaced below
        constraint_ids=_ALL_CONSTRAINTS,
        prerequisites=prereqs,
        golden_calls=tuple((t, dict(a)) for t, a in golden),
        ignore_tables=ignore_tables,
    )
    env = BankEnv(env_registry, constraints, (draft,))
    expected = apply_calls(env, draft, draft.golden_calls)
    return replace(draft, expected_final=expected)


def default_corpus() -> BankEnv:
    """Bundled 18-task corpus across the five tool categories, each with a
    golden action sequence that passes all five oracle criteria."""
    registry = default_registry()
    constraints = default_constraints()
    u1 = ("login", {"user_id": "u1", "pin": "1111"})
    u2 = ("login", {"user_id": "u2", "pin": "2222"})
    credit_chain = (
        ("submit_credit_application", {"account_id": "A1", "app_id": "APP1"}),
        ("verify_income", {"app_id": "APP1"}),
        ("get_credit_score", {"app_id": "APP1"}),
        ("set_credit_limit", {"app_id": "APP1", "limit": 5000}),
        ("approve_credit", {"app_id": "APP1"}),
    )
    credit_edges = (
        ("submit_credit_application", "verify_income"),
        ("verify_income", "get_credit_score"),
        ("get_credit_score", "set_credit_limit"),
        ("set_credit_limit", "approve_credit"),
    )

    def t(*args, **kwargs):
        return _task(registry, constraints, *args, **kwargs)

    tasks = (
        t(
            "bank-001",
            "account",
            "Deposit 250 into u1's checking account A1.",
            [u1, ("deposit", {"account_id": "A1", "amount": 250})],
            ("deposit", {"account_id": "A1", "amount": 250}),
            [("login", "deposit")],
        ),
        t(
            "bank-002",
            "account",
            "Withdraw 80 from u1's checking account A1.",
            [u1, ("withdraw", {"account_id": "A1", "amount": 80})],
            ("withdraw", {"account_id": "A1", "amount": 80}),
            [("login", "withdraw")],
        ),
        t(
            "bank-003",
            "account",
            "Transfer 50 from A1 to A2 for u1.",
            [u1, ("transfer", {"from_account": "A1", "to_account": "A2", "amount": 50})],
            ("transfer", {"from_account": "A1", "to_account": "A2", "amount": 50}),
            [("login", "transfer")],
        ),
        t(
            "bank-004",
            "account",
            "Open savings account A9 for u2 and deposit 100.",
            [
                u2,
                ("open_account", {"user_id": "u2", "account_id": "A9", "type": "savings"}),
                ("deposit", {"account_id": "A9", "amount": 100}),
            ],
            ("deposit", {"account_id": "A9", "amount": 100}),
            [("login", "open_account"), ("open_account", "deposit")],
        ),
        t(
            "bank-005",
            "account",
            "Check A2's balance, then move 200 from A2 to A1.",
            [
                u1,
                ("get_balance", {"account_id": "A2"}),
                ("transfer", {"from_account": "A2", "to_account": "A1", "amount": 200}),
            ],
            ("transfer", {"from_account": "A2", "to_account": "A1", "amount": 200}),
            [("login", "transfer")],
        ),
        t(
            "bank-006",
            "credit",
            "Run u1's credit application APP1 through the full approval chain.",
            [u1, *credit_chain],
            ("approve_credit", {"app_id": "APP1"}),
            [("login", "submit_credit_application"), *credit_edges],
        ),
        t(
            "bank-007",
            "credit",
            "Submit credit application APP2 for u2's account A3 and verify income.",
            [
                u2,
                ("submit_credit_application", {"account_id": "A3", "app_id": "APP2"}),
                ("verify_income", {"app_id": "APP2"}),
            ],
            ("verify_income", {"app_id": "APP2"}),
            [("login", "submit_credit_application"), ("submit_credit_application", "verify_income")],
        ),
        t(
            "bank-008",
            "credit",
            "Score APP3 and set its limit to 2000 for u1's account A2.",
            [
                u1,
                ("submit_credit_application", {"account_id": "A2", "app_id": "APP3"}),
                ("verify_income", {"app_id": "APP3"}),
                ("get_credit_score", {"app_id": "APP3"}),
                ("set_credit_limit", {"app_id": "APP3", "limit": 2000}),
            ],
            ("set_credit_limit", {"app_id": "APP3", "limit": 2000}),
            [
                ("login", "submit_credit_application"),
                ("submit_credit_application", "verify_income"),
                ("verify_income", "get_credit_score"),
                ("get_credit_score", "set_credit_limit"),
            ],
        ),
        t(
            "bank-009",
            "credit",
            "Approve u2's application APP4 on account A3 after the full chain.",
            [
                u2,
                ("submit_credit_application", {"account_id": "A3", "app_id": "APP4"}),
                ("verify_income", {"app_id": "APP4"}),
                ("get_credit_score", {"app_id": "APP4"}),
                ("set_credit_limit", {"app_id": "APP4", "limit": 1000}),
                ("approve_credit", {"app_id": "APP4"}),
            ],
            ("approve_credit", {"app_id": "APP4"}),
            [("login", "submit_credit_application"), *credit_edges],
        ),
        t(
            "bank-010",
            "currency",
            "Convert 100 from A1 (USD) into A2 (EUR) for u1.",
            [
                u1,
                ("get_fx_rate", {"pair": "USD/EUR"}),
                (
                    "convert_currency",
                    {"from_account": "A1", "to_account": "A2", "amount": 100, "pair": "USD/EUR"},
                ),
            ],
            (
                "convert_currency",
                {"from_account": "A1", "to_account": "A2", "amount": 100, "pair": "USD/EUR"},
            ),
            [("login", "convert_currency")],
        ),
        t(
            "bank-011",
            "currency",
            "Re-denominate 40 in u2's checking account A3 at the USD/GBP rate.",
            [
                u2,
                ("get_fx_rate", {"pair": "USD/GBP"}),
                (
                    "convert_currency",
                    {"from_account": "A3", "to_account": "A3", "amount": 40, "pair": "USD/GBP"},
                ),
            ],
            (
                "convert_currency",
                {"from_account": "A3", "to_account": "A3", "amount": 40, "pair": "USD/GBP"},
            ),
            [("login", "convert_currency")],
        ),
        t(
            "bank-012",
            "currency",
            "Move 300 from A2 (EUR) to A1 (USD) for u1.",
            [
                u1,
                ("get_fx_rate", {"pair": "EUR/USD"}),
                (
                    "convert_currency",
                    {"from_account": "A2", "to_account": "A1", "amount": 300, "pair": "EUR/USD"},
                ),
            ],
            (
                "convert_currency",
                {"from_account": "A2", "to_account": "A1", "amount": 300, "pair": "EUR/USD"},
            ),
            [("login", "convert_currency")],
        ),
        t(
            "bank-013",
            "authentication",
            "Reset u1's PIN to 9999 after identity verification.",
            [
                u1,
                ("verify_identity", {"user_id": "u1", "code": "id-check"}),
                ("reset_pin", {"user_id": "u1", "new_pin": "9999"}),
            ],
            ("reset_pin", {"user_id": "u1", "new_pin": "9999"}),
            [("login", "reset_pin")],
        ),
        t(
            "bank-014",
            "authentication",
            "Log u2 in and back out.",
            [u2, ("logout", {"user_id": "u2"})],
            ("logout", {"user_id": "u2"}),
            [("login", "logout")],
        ),
        t(
            "bank-015",
            "authentication",
            "Reset u2's PIN to 4321.",
            [
                u2,
                ("verify_identity", {"user_id": "u2", "code": "id-check"}),
                ("reset_pin", {"user_id": "u2", "new_pin": "4321"}),
            ],
            ("reset_pin", {"user_id": "u2", "new_pin": "4321"}),
            [("login", "reset_pin")],
        ),
        t(
            "bank-016",
            "admin",
            "Freeze u1's checking account A1.",
            [u1, ("freeze_account", {"account_id": "A1"})],
            ("freeze_account", {"account_id": "A1"}),
            [("login", "freeze_account")],
        ),
        t(
            "bank-017",
            "admin",
            "Unfreeze u2's savings account A4 and audit it.",
            [
                u2,
                ("unfreeze_account", {"account_id": "A4"}),
                ("audit_log", {"account_id": "A4"}),
            ],
            ("unfreeze_account", {"account_id": "A4"}),
            [("login", "unfreeze_account")],
            ignore_tables=("sessions",),
        ),
        t(
            "bank-018",
            "admin",
            "Freeze u2's checking account A3 for review.",
            [u2, ("freeze_account", {"account_id": "A3"})],
            ("freeze_account", {"account_id": "A3"}),
            [("login", "freeze_account")],
        ),
    )
    return BankEnv(registry, constraints, tasks)


_SYNTHETIC_WEIGHTS = (
    ("account", 44),
    ("credit", 30),
    ("currency", 22),
    ("authentication", 20),
    ("admin", 18),
)


def synthetic_tasks(n: int = 134) -> list[TaskSpec]:
    """Category-weighted synthetic tasks for split/sampling fixtures.

    For the default n=134 the category sizes are exactly the documented
    weights; other sizes cycle the weighted pattern.
    """
    registry = default_registry()
    constraints = default_constraints()
    pattern: list[str] = []
    for category, weight in _SYNTHETIC_WEIGHTS:
        pattern.extend([category] * weight)
    categories = [pattern[i % len(pattern)] for i in range(n)]
    world = _base_world()
    tasks = []
    for i, category in enumerate(categories):
        task_id = f"synth-{i:03d}"
        draft = TaskSpec(
            task_id=task_id,
            category=category,
            initial=world,
            goal=f"synthetic {category} task {i}",
            target_action=("deposit", {"account_id": "A1", "amount": 1}),
            expected_final=world,
            constraint_ids=(),
            prerequisites=PrerequisiteGraph(),
            golden_calls=(),
        )
        tasks.append(draft)
    return tasks


# ---------------------------------------------------------------------------
# Corpus file format
# ---------------------------------------------------------------------------


def _task_to_dict(task: TaskSpec) -> dict:
    return {
        "task_id": task.task_id,
        "category": task.category,
        "goal": task.goal,
        "initial": task.initial.to_json_dict(),
        "expected_final": task.expected_final.to_json_dict(),
        "target_action": [task.target_action[0], dict(task.target_action[1])],
        "constraint_ids": list(task.constraint_ids),
        "prerequisites": sorted(map(list, task.prerequisites.edges)),
        "golden_calls": [[tool, dict(args)] for tool, args in task.golden_calls],
        "turn_limit": task.turn_limit,
        "action_limit": task.action_limit,
        "ignore_tables": list(task.ignore_tables),
    }


def _task_from_dict(data: Mapping) -> TaskSpec:
    return TaskSpec(
        task_id=data["task_id"],
        category=data["category"],
        initial=state_from_json_dict(data["initial"]),
        goal=data["goal"],
        target_action=(data["target_action"][0], data["target_action"][1]),
        expected_final=state_from_json_dict(data["expected_final"]),
        constraint_ids=tuple(data["constraint_ids"]),
        prerequisites=PrerequisiteGraph(frozenset((a, b) for a, b in data["prerequisites"])),
        golden_calls=tuple((tool, args) for tool, args in data["golden_calls"]),
        turn_limit=data.get("turn_limit", 20),
        action_limit=data.get("action_limit", 10),
        ignore_tables=tuple(data.get("ignore_tables", ())),
    )


def save_corpus(env: BankEnv, path: str | Path) -> None:
    payload = {
        "schema": CORPUS_SCHEMA_VERSION,
        "tasks": [_task_to_dict(t) for t in env.tasks],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_corpus(path: str | Path, registry: ToolRegistry | None = None) -> BankEnv:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema") != CORPUS_SCHEMA_VERSION:
        raise ValueError(f"unsupported corpus schema {data.get('schema')!r}")
    registry = registry or default_registry()
    constraints = default_constraints()
    tasks = tuple(_task_from_dict(t) for t in data["tasks"])
    for task in tasks:
        for cid in task.constraint_ids:
            if cid not in constraints:
                raise ValueError(f"task {task.task_id} names unknown constraint {cid!r}")
        tool, _ = task.target_action
        if tool not in registry:
            raise ValueError(f"task {task.task_id} targets unknown tool {tool!r}")
    return BankEnv(registry, constraints, tasks)
