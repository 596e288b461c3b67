"""Line-oriented scenario DSL and runner.

One command per line, `#` starts a comment, values with spaces are quoted.
The parser statically validates that every step only references subjects and
record aliases introduced by earlier steps, and reports problems with line
numbers before anything executes. Transcripts are byte-stable for a fixed
(scenario, seed) pair and never contain plaintext or key material (digests
only).

Commands:

    seed <n>
    enroll <subject> <org> <ROLE>
    register <subject>
    upload <alias> patient=<subject> hospital=<subject> data=<spec> [meta=<text>]
    grant <alias> owner=<subject> grantee=<subject> [price=<n>] [expires=+<n>|never]
    fetch <alias> as=<subject> [expect=ok|<ErrorName>]
    tick <n>
    kill-node <node_id>
    recover-node <node_id>
    assert balance <subject> <n>
    assert owner <alias> <subject>
    assert records <subject> <n>
    assert conservation
    assert peers-agree
    assert chain-valid

data specs: text:<utf8>, hex:<bytes>, random:<n> (n bytes from the seeded
generator). A bare value is treated as text.
"""

from __future__ import annotations

import hashlib
import shlex
from dataclasses import dataclass, field

from .config import ChannelSpec
from .errors import MedLedgerError, ScenarioError
from .identity import Role
from .network import Platform

ROLE_NAMES = {role.name: role for role in Role}
USER_ROLES = (Role.HOSPITAL, Role.PATIENT, Role.PRACTITIONER, Role.RESEARCHER)


@dataclass
class Step:
    line: int
    command: str
    args: list[str]
    options: dict[str, str]
    raw: str


@dataclass
class Scenario:
    seed: int
    steps: list[Step]


def _split_options(tokens: list[str]) -> tuple[list[str], dict[str, str]]:
    positional, options = [], {}
    for token in tokens:
        if "=" in token:
            key, value = token.split("=", 1)
            options[key] = value
        else:
            positional.append(token)
    return positional, options


def parse_scenario(text: str) -> Scenario:
    seed = 0
    seed_seen = False
    steps: list[Step] = []
    subjects: set[str] = set()
    aliases: set[str] = set()

    def fail(line_no: int, message: str) -> ScenarioError:
        return ScenarioError(message, line=line_no)

    def need_subject(line_no: int, subject: str) -> None:
        if subject not in subjects:
            raise fail(line_no, f"unknown subject {subject!r}")

    def need_alias(line_no: int, alias: str) -> None:
        if alias not in aliases:
            raise fail(line_no, f"unknown record alias {alias!r}")

    def need_int(line_no: int, value: str, what: str) -> int:
        try:
            return int(value)
        except ValueError:
            raise fail(line_no, f"{what} must be an integer, got {value!r}") from None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        try:
            tokens = shlex.split(stripped)
        except ValueError as exc:
            raise fail(line_no, f"bad quoting: {exc}")
        command, rest = tokens[0], tokens[1:]
        positional, options = _split_options(rest)
        step = Step(line_no, command, positional, options, stripped)

        if command == "seed":
            if seed_seen:
                raise fail(line_no, "duplicate seed directive")
            if len(positional) != 1 or options:
                raise fail(line_no, "usage: seed <n>")
            seed = need_int(line_no, positional[0], "seed")
            seed_seen = True
            continue

        if command == "enroll":
            if len(positional) != 3 or options:
                raise fail(line_no, "usage: enroll <subject> <org> <ROLE>")
            subject, _, role = positional
            if role not in ROLE_NAMES or ROLE_NAMES[role] not in USER_ROLES:
                raise fail(line_no, f"bad role {role!r}")
            if subject in subjects:
                raise fail(line_no, f"subject {subject!r} already introduced")
            subjects.add(subject)
        elif command == "register":
            if len(positional) != 1 or options:
                raise fail(line_no, "usage: register <subject>")
            need_subject(line_no, positional[0])
        elif command == "upload":
            if len(positional) != 1:
                raise fail(line_no, "usage: upload <alias> patient=… hospital=… data=…")
            for key in ("patient", "hospital", "data"):
                if key not in options:
                    raise fail(line_no, f"upload requires {key}=")
            need_subject(line_no, options["patient"])
            need_subject(line_no, options["hospital"])
            alias = positional[0]
            if alias in aliases:
                raise fail(line_no, f"record alias {alias!r} already introduced")
            if options["data"].startswith("random:"):
                need_int(line_no, options["data"][len("random:"):], "random size")
            aliases.add(alias)
        elif command == "grant":
            if len(positional) != 1 or "owner" not in options or "grantee" not in options:
                raise fail(line_no, "usage: grant <alias> owner=… grantee=… [price=…] [expires=…]")
            need_alias(line_no, positional[0])
            need_subject(line_no, options["owner"])
            need_subject(line_no, options["grantee"])
            if "price" in options:
                need_int(line_no, options["price"], "price")
            expires = options.get("expires", "never")
            if expires != "never":
                if not expires.startswith("+"):
                    raise fail(line_no, "expires must be +<ticks> or never")
                need_int(line_no, expires[1:], "expires")
        elif command == "fetch":
            if len(positional) != 1 or "as" not in options:
                raise fail(line_no, "usage: fetch <alias> as=<subject> [expect=…]")
            need_alias(line_no, positional[0])
            need_subject(line_no, options["as"])
        elif command == "tick":
            if len(positional) != 1 or options:
                raise fail(line_no, "usage: tick <n>")
            need_int(line_no, positional[0], "tick count")
        elif command in ("kill-node", "recover-node"):
            if len(positional) != 1 or options:
                raise fail(line_no, f"usage: {command} <node_id>")
        elif command == "assert":
            if not positional:
                raise fail(line_no, "empty assert")
            kind = positional[0]
            if kind == "balance":
                if len(positional) != 3:
                    raise fail(line_no, "usage: assert balance <subject> <n>")
                need_subject(line_no, positional[1])
                need_int(line_no, positional[2], "balance")
            elif kind == "owner":
                if len(positional) != 3:
                    raise fail(line_no, "usage: assert owner <alias> <subject>")
                need_alias(line_no, positional[1])
                need_subject(line_no, positional[2])
            elif kind == "records":
                if len(positional) != 3:
                    raise fail(line_no, "usage: assert records <subject> <n>")
                need_subject(line_no, positional[1])
                need_int(line_no, positional[2], "record count")
            elif kind in ("conservation", "peers-agree", "chain-valid"):
                if len(positional) != 1:
                    raise fail(line_no, f"assert {kind} takes no arguments")
            else:
                raise fail(line_no, f"unknown assert kind {kind!r}")
        else:
            raise fail(line_no, f"unknown command {command!r}")

        steps.append(step)

    return Scenario(seed=seed, steps=steps)


@dataclass
class Transcript:
    text: str
    ok: bool
    failed_line: int | None
    tip_hash: str
    state_hash: str
    balances: dict[str, int] = field(default_factory=dict)


def _data_bytes(spec: str, platform: Platform) -> bytes:
    if spec.startswith("text:"):
        return spec[len("text:"):].encode("utf-8")
    if spec.startswith("hex:"):
        return bytes.fromhex(spec[len("hex:"):])
    if spec.startswith("random:"):
        return platform.rng.randbytes(int(spec[len("random:"):]))
    return spec.encode("utf-8")


def _short(data: bytes, n: int = 16) -> str:
    return data.hex()[:n]


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


class ScenarioRunner:
    def __init__(self, scenario: Scenario, spec: ChannelSpec, name: str = "scenario",
                 seed_override: int | None = None, parallel: bool = False):
        self.scenario = scenario
        self.seed = scenario.seed if seed_override is None else seed_override
        self.name = name
        self.platform = Platform(spec, self.seed, parallel_delivery=parallel)
        self.records: dict[str, str] = {}
        self.lines: list[str] = []

    def run(self) -> Transcript:
        platform = self.platform
        self.lines.append("medledger transcript")
        self.lines.append(f"scenario: {self.name} seed={self.seed}")
        ok = True
        failed_line = None
        for index, step in enumerate(self.scenario.steps, start=1):
            prefix = f"[{index:02d}] "
            try:
                detail = self._execute(step)
                self.lines.append(prefix + detail)
            except MedLedgerError as err:
                self.lines.append(prefix + f"{step.command} FAIL {err.name}: {err}")
                ok = False
                failed_line = step.line
                break
        tip = platform.tip_hash.hex()
        state = platform.state_hash().hex()
        balances = platform.balances()
        self.lines.append(f"final-tip: {tip}")
        self.lines.append(f"final-state: {state}")
        self.lines.append(f"height: {platform.chain_height} clock: {platform.clock.now}")
        self.lines.append("balances:")
        for subject in sorted(balances):
            self.lines.append(f"  {subject} {balances[subject]}")
        text = "\n".join(self.lines) + "\n"
        return Transcript(text, ok, failed_line, tip, state, balances)

    def _execute(self, step: Step) -> str:
        platform = self.platform
        cmd = step.command

        if cmd == "enroll":
            subject, org, role_name = step.args
            cert = platform.enroll(subject, org, ROLE_NAMES[role_name])
            return (f"enroll {subject} org={org} role={role_name} "
                    f"ok fingerprint={cert.fingerprint()}")

        if cmd == "register":
            subject = step.args[0]
            result = platform.register(subject)
            return (f"register {subject} ok block={result.block_height} "
                    f"tx={_short(result.tx_id)} {result.validity.name}")

        if cmd == "upload":
            alias = step.args[0]
            plaintext = _data_bytes(step.options["data"], platform)
            record_id, cid, result = platform.upload(
                step.options["patient"], step.options["hospital"], plaintext,
                step.options.get("meta", ""))
            self.records[alias] = record_id
            return (f"upload {alias} patient={step.options['patient']} "
                    f"hospital={step.options['hospital']} ok record={record_id[:16]} "
                    f"cid={cid.text} block={result.block_height} "
                    f"plaintext-sha={_sha(plaintext)} bytes={len(plaintext)}")

        if cmd == "grant":
            alias = step.args[0]
            record_id = self.records[alias]
            price = int(step.options["price"]) if "price" in step.options else None
            expires_raw = step.options.get("expires", "never")
            expires = None if expires_raw == "never" else \
                platform.clock.now + int(expires_raw[1:])
            result = platform.grant(step.options["owner"], record_id,
                                    step.options["grantee"], price, expires)
            shown = "never" if expires is None else str(expires)
            paid = platform.config.default_price if price is None else price
            return (f"grant {alias} owner={step.options['owner']} "
                    f"grantee={step.options['grantee']} price={paid} expires={shown} "
                    f"ok block={result.block_height}")

        if cmd == "fetch":
            alias = step.args[0]
            requester = step.options["as"]
            expect = step.options.get("expect", "ok")
            record_id = self.records[alias]
            try:
                result = platform.fetch(requester, record_id)
            except MedLedgerError as err:
                if err.name == expect:
                    return f"fetch {alias} as={requester} denied {err.name} (expected)"
                raise
            if expect != "ok":
                raise ScenarioError(f"expected {expect}, but fetch succeeded", step.line)
            return (f"fetch {alias} as={requester} ok "
                    f"plaintext-sha={_sha(result.plaintext)} "
                    f"block={result.block_height}")

        if cmd == "tick":
            count = int(step.args[0])
            blocks = platform.run_ticks(count)
            return f"tick {count} ok blocks={len(blocks)} clock={platform.clock.now}"

        if cmd == "kill-node":
            platform.cas.set_node_alive(step.args[0], False)
            return f"kill-node {step.args[0]} ok"

        if cmd == "recover-node":
            platform.cas.set_node_alive(step.args[0], True)
            return f"recover-node {step.args[0]} ok"

        if cmd == "assert":
            return self._assert(step)

        raise ScenarioError(f"unknown command {cmd!r}", step.line)

    def _assert(self, step: Step) -> str:
        platform = self.platform
        kind = step.args[0]

        def check(condition: bool, detail: str) -> str:
            if not condition:
                raise ScenarioError(f"assert {kind} failed: {detail}", step.line)
            return f"assert {' '.join(step.args)} ok"

        if kind == "balance":
            subject, expected = step.args[1], int(step.args[2])
            actual = platform.balance_of(subject)
            return check(actual == expected, f"{subject} has {actual}, expected {expected}")
        if kind == "owner":
            record_id = self.records[step.args[1]]
            actual = platform.record_owner(record_id)
            return check(actual == step.args[2], f"owner is {actual!r}")
        if kind == "records":
            subject, expected = step.args[1], int(step.args[2])
            actual = len(platform.records_of(subject))
            return check(actual == expected, f"{subject} owns {actual}, expected {expected}")
        if kind == "conservation":
            return check(platform.token_conservation_holds(), "balance sum drifted")
        if kind == "peers-agree":
            tips = {peer.ledger.tip_hash for peer in platform.peers}
            return check(len(tips) == 1, f"{len(tips)} distinct tips")
        if kind == "chain-valid":
            return check(platform.verify_chain(), "verify_chain returned false")
        raise ScenarioError(f"unknown assert kind {kind!r}", step.line)


def run_scenario_text(text: str, spec: ChannelSpec, name: str = "scenario",
                      seed_override: int | None = None,
                      parallel: bool = False) -> tuple[Transcript, Platform]:
    scenario = parse_scenario(text)
    runner = ScenarioRunner(scenario, spec, name=name,
                            seed_override=seed_override, parallel=parallel)
    transcript = runner.run()
    return transcript, runner.platform
