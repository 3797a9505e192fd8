"""Interpreter for the command lines management agents emit.

Three syntactic families share one entry point:

    kubectl <verb> ...            cluster reads and writes
    curl '<url>'                  the metrics HTTP surface
    name(kw='...', ...)           agent primitives (report_result,
                                  query_prometheus)

plus a single optional `| grep PATTERN` stage on any of them. There is
no general shell underneath: variables, globbing, `&&`, redirection and
multi-stage pipes are all rejected with an unknown-command error, which
is itself useful environment feedback for a learning agent.

Every execution returns an ExecutionResult obeying one contract the
rest of the system leans on: exit_code 0 if and only if stderr is
empty. Failures always explain themselves on stderr.
"""

from __future__ import annotations

import hashlib
import json
import re
import shlex
from dataclasses import dataclass
from typing import Callable

from . import cluster as cl
from . import httpapi

REPORT_MESSAGE_TYPES = ("RESPONSE", "INFO", "ERROR")

_FORBIDDEN_CONSTRUCTS = ("&&", "||", ";", "$", "`", ">", "<")


@dataclass
class ExecutionResult:
    stdout: str
    stderr: str
    exit_code: int
    state_mutated: bool
    duration_ms: int

    @property
    def ok(self) -> bool:
        return self.exit_code == 0


class _CommandError(Exception):
    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


def _unknown(what: str) -> _CommandError:
    return _CommandError(f'error: unknown command "{what}"')


def _error_detail(body: str) -> str:
    """Unwrap the `error` field of a JSON error body so callers see the
    message as written instead of its JSON-escaped form."""
    try:
        doc = json.loads(body)
    except ValueError:
        return body
    if isinstance(doc, dict) and doc.get("error"):
        return str(doc["error"])
    return body


def _columns(rows: list[list[str]]) -> str:
    """Left-justified columns, three spaces of gutter, no trailing pad."""
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [cell.ljust(widths[i] + 3) for i, cell in enumerate(row[:-1])]
        lines.append("".join(cells) + row[-1])
    return "\n".join(lines)


def _split_outside_quotes(line: str, sep: str) -> list[str]:
    parts = []
    buf = []
    quote = None
    for c in line:
        if quote:
            buf.append(c)
            if c == quote:
                quote = None
        elif c in "'\"":
            quote = c
            buf.append(c)
        elif c == sep:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(c)
    parts.append("".join(buf))
    return parts


def _contains_outside_quotes(line: str, needles: tuple[str, ...]) -> str | None:
    quote = None
    i = 0
    while i < len(line):
        c = line[i]
        if quote:
            if c == quote:
                quote = None
        elif c in "'\"":
            quote = c
        else:
            for needle in needles:
                if line.startswith(needle, i):
                    return needle
        i += 1
    return None


_CALL_RE = re.compile(r"^\s*(\w+)\((.*)\)\s*$", re.S)
_KWARG_RE = re.compile(r"\s*(\w+)\s*=\s*'((?:[^'\\]|\\.)*)'\s*(?:,|$)")


def _parse_call(text: str) -> tuple[str, dict[str, str]] | None:
    m = _CALL_RE.match(text)
    if m is None:
        return None
    kwargs: dict[str, str] = {}
    body = m.group(2)
    pos = 0
    while pos < len(body):
        km = _KWARG_RE.match(body, pos)
        if km is None:
            if body[pos:].strip() == "":
                break
            raise _CommandError(f"error: cannot parse argument near {body[pos:pos + 20]!r}")
        kwargs[km.group(1)] = km.group(2).replace("\\'", "'")
        pos = km.end()
    return m.group(1), kwargs


def _duration_ms(line: str) -> int:
    return 20 + int.from_bytes(hashlib.sha256(line.encode()).digest()[:2], "big") % 80


# ---------------------------------------------------------------------------
# kubectl flag handling


def _parse_flags(tokens: list[str]) -> tuple[list[str], dict]:
    positionals: list[str] = []
    flags: dict = {}
    i = 0
    while i < len(tokens):
        t = tokens[i]
        if t == "--all-namespaces":
            flags["all_namespaces"] = True
        elif t in ("-n", "--namespace"):
            i += 1
            if i >= len(tokens):
                raise _CommandError(f"error: flag needs an argument: {t}")
            flags["namespace"] = tokens[i]
        elif t.startswith("--namespace="):
            flags["namespace"] = t.split("=", 1)[1]
        elif t.startswith("--replicas="):
            flags["replicas"] = t.split("=", 1)[1]
        elif t.startswith("--requests="):
            flags["requests"] = t.split("=", 1)[1]
        elif t.startswith("--limits="):
            flags["limits"] = t.split("=", 1)[1]
        elif t == "--overwrite":
            flags["overwrite"] = True
        elif t in ("-p", "--patch"):
            i += 1
            if i >= len(tokens):
                raise _CommandError(f"error: flag needs an argument: {t}")
            flags["patch"] = tokens[i]
        elif t.startswith("--patch="):
            flags["patch"] = t.split("=", 1)[1]
        elif t.startswith("-"):
            raise _CommandError(f"error: unknown flag: {t}")
        else:
            positionals.append(t)
        i += 1
    return positionals, flags


def _parse_quantities(text: str) -> dict[str, str]:
    out = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        if key not in ("cpu", "memory") or not value:
            raise _CommandError(f"error: bad resource spec {part!r}")
        out[key] = value
    return out


class ShellGateway:
    """Executes one command line against a cluster state.

    `components` names the agent identities report_result may address;
    `report_sink` receives (component, message, message_type) for every
    accepted report and is how reports reach the interaction history.
    """

    def __init__(
        self,
        state: cl.ClusterState,
        components: tuple[str, ...] = (),
        report_sink: Callable[[str, str, str], None] | None = None,
    ):
        self.state = state
        self.components = tuple(components)
        self.report_sink = report_sink

    # -- entry point --------------------------------------------------------

    def execute(self, line: str) -> ExecutionResult:
        digest_before = cl.state_digest(self.state)
        try:
            stdout = self._run_pipeline(line)
            stderr = ""
            exit_code = 0
        except _CommandError as exc:
            stdout = ""
            stderr = str(exc)
            exit_code = exc.exit_code
        mutated = cl.state_digest(self.state) != digest_before
        return ExecutionResult(stdout, stderr, exit_code, mutated, _duration_ms(line))

    def _run_pipeline(self, line: str) -> str:
        construct = _contains_outside_quotes(line, _FORBIDDEN_CONSTRUCTS)
        if construct is not None:
            raise _unknown(construct)
        stages = _split_outside_quotes(line, "|")
        if len(stages) > 2:
            raise _unknown("|")
        stdout = self._run_stage(stages[0].strip())
        if len(stages) == 2:
            stdout = self._run_grep(stages[1].strip(), stdout)
        return stdout

    def _run_stage(self, stage: str) -> str:
        if not stage:
            raise _unknown("")
        call = _parse_call(stage) if re.match(r"^\s*\w+\(", stage) else None
        if call is not None:
            name, kwargs = call
            if name == "report_result":
                return self._report_result(kwargs)
            if name == "query_prometheus":
                return self._query_prometheus(kwargs)
            raise _unknown(name)
        try:
            tokens = shlex.split(stage)
        except ValueError as exc:
            raise _CommandError(f"error: {exc}")
        if not tokens:
            raise _unknown(stage)
        if tokens[0] == "kubectl":
            return self._kubectl(tokens[1:])
        if tokens[0] == "curl":
            return self._curl(tokens[1:])
        raise _unknown(tokens[0])

    def _run_grep(self, stage: str, upstream: str) -> str:
        try:
            tokens = shlex.split(stage)
        except ValueError as exc:
            raise _CommandError(f"error: {exc}")
        if not tokens or tokens[0] != "grep":
            raise _unknown(tokens[0] if tokens else stage)
        if len(tokens) != 2:
            raise _CommandError("error: grep takes exactly one pattern")
        pattern = tokens[1]
        matched = [ln for ln in upstream.splitlines() if pattern in ln]
        if not matched:
            raise _CommandError(f'grep: pattern "{pattern}" matched no lines')
        return "\n".join(matched)

    # -- agent primitives ----------------------------------------------------

    def _report_result(self, kwargs: dict[str, str]) -> str:
        missing = {"component", "message", "message_type"} - set(kwargs)
        if missing:
            raise _CommandError(f"error: report_result missing {sorted(missing)}")
        component = kwargs["component"]
        message_type = kwargs["message_type"]
        if component not in self.components:
            raise _CommandError(f"error: unknown component '{component}'")
        if message_type not in REPORT_MESSAGE_TYPES:
            raise _CommandError(f"error: unknown message_type '{message_type}'")
        if self.report_sink is not None:
            self.report_sink(component, kwargs["message"], message_type)
        return f"message delivered to manager from '{component}' ({message_type})"

    def _query_prometheus(self, kwargs: dict[str, str]) -> str:
        # duration/step are accepted for interface compatibility and
        # ignored: evaluation is instant at the current simulation time.
        expr = kwargs.get("promQL") or kwargs.get("promql")
        if not expr:
            raise _CommandError("error: query_prometheus needs promQL='...'")
        response = httpapi.handle_request(
            self.state.metrics, httpapi.encode_query(expr), self.state.sim_time
        )
        if not response.ok:
            raise _CommandError(f"error: prometheus query failed: {response.body}")
        return response.body

    # -- curl -----------------------------------------------------------------

    def _curl(self, tokens: list[str]) -> str:
        if len(tokens) != 1:
            raise _CommandError("error: curl takes exactly one URL")
        url = tokens[0]
        m = re.match(r"^https?://[^/]+(/.*)?$", url)
        if m is None:
            raise _CommandError(f"curl: (3) URL rejected: {url}")
        path_and_query = m.group(1) or "/"
        response = httpapi.handle_request(self.state.metrics, path_and_query, self.state.sim_time)
        if not response.ok:
            raise _CommandError(
                "curl: (22) The requested URL returned error: "
                f"{response.status_code}: {_error_detail(response.body)}",
                exit_code=22,
            )
        return response.body

    # -- kubectl --------------------------------------------------------------

    def _kubectl(self, tokens: list[str]) -> str:
        if not tokens:
            raise _unknown("kubectl")
        positionals, flags = _parse_flags(tokens[1:])
        verb = tokens[0]
        if verb == "get":
            return self._get(positionals, flags)
        if verb == "describe":
            return self._describe(positionals, flags)
        if verb == "top":
            return self._top(positionals, flags)
        if verb == "scale":
            return self._scale(positionals, flags)
        if verb == "set":
            return self._set(positionals, flags)
        if verb == "label":
            return self._label(positionals, flags)
        if verb == "patch":
            return self._patch(positionals, flags)
        if verb == "delete":
            return self._delete(positionals, flags)
        raise _unknown(f"kubectl {verb}")

    def _namespace(self, flags: dict) -> str:
        ns = flags.get("namespace", "default")
        if ns not in self.state.namespaces:
            raise _CommandError(f'Error from server (NotFound): namespaces "{ns}" not found')
        return ns

    def _mutate(self, action: str, args: dict) -> None:
        try:
            cl.mutate(self.state, action, args)
        except cl.NotFound as exc:
            raise _CommandError(f"Error from server (NotFound): {exc}") from None
        except cl.InvalidArgument as exc:
            raise _CommandError(f"error: {exc}") from None

    # get

    def _get(self, positionals: list[str], flags: dict) -> str:
        if not positionals:
            raise _CommandError("error: you must specify the type of resource to get")
        kind = positionals[0]
        name = positionals[1] if len(positionals) > 1 else None
        if len(positionals) > 2:
            raise _unknown(" ".join(positionals[2:]))
        if kind in ("deployments", "deployment"):
            return self._get_deployments(name, flags)
        if kind in ("pods", "pod"):
            return self._get_pods(name, flags)
        raise _CommandError(f'error: the server doesn\'t have a resource type "{kind}"')

    def _scope_deployments(self, name: str | None, flags: dict) -> list[cl.Deployment]:
        if flags.get("all_namespaces"):
            deps = sorted(self.state.deployments, key=lambda d: (d.namespace, d.name))
        else:
            ns = self._namespace(flags)
            deps = sorted(
                (d for d in self.state.deployments if d.namespace == ns), key=lambda d: d.name
            )
        if name is not None:
            deps = [d for d in deps if d.name == name]
            if not deps:
                raise _CommandError(f'Error from server (NotFound): deployments.apps "{name}" not found')
        return deps

    def _get_deployments(self, name: str | None, flags: dict) -> str:
        deps = self._scope_deployments(name, flags)
        if not deps:
            return "No resources found."
        all_ns = bool(flags.get("all_namespaces"))
        header = ["NAME", "READY", "UP-TO-DATE", "AVAILABLE", "AGE"]
        if all_ns:
            header = ["NAMESPACE"] + header
        rows = [header]
        for dep in deps:
            pods = self.state.deployment_pods(dep)
            ready = sum(1 for p in pods if p.phase == "Running")
            row = [
                dep.name,
                f"{ready}/{dep.replicas}",
                str(dep.replicas),
                str(ready),
                cl.format_age(self.state.sim_time),
            ]
            if all_ns:
                row = [dep.namespace] + row
            rows.append(row)
        return _columns(rows)

    def _get_pods(self, name: str | None, flags: dict) -> str:
        if flags.get("all_namespaces"):
            pods = sorted(self.state.pods, key=lambda p: (p.namespace, p.name))
        else:
            ns = self._namespace(flags)
            pods = sorted((p for p in self.state.pods if p.namespace == ns), key=lambda p: p.name)
        if name is not None:
            pods = [p for p in pods if p.name == name]
            if not pods:
                raise _CommandError(f'Error from server (NotFound): pods "{name}" not found')
        if not pods:
            return "No resources found."
        all_ns = bool(flags.get("all_namespaces"))
        header = ["NAME", "READY", "STATUS", "RESTARTS", "AGE"]
        if all_ns:
            header = ["NAMESPACE"] + header
        rows = [header]
        for pod in pods:
            row = [
                pod.name,
                "1/1" if pod.phase == "Running" else "0/1",
                pod.phase,
                str(pod.restarts),
                cl.format_age(self.state.sim_time - pod.start_time),
            ]
            if all_ns:
                row = [pod.namespace] + row
            rows.append(row)
        return _columns(rows)

    # describe

    def _describe(self, positionals: list[str], flags: dict) -> str:
        if len(positionals) != 2:
            raise _CommandError("error: describe takes a resource type and a name")
        kind, name = positionals
        ns = self._namespace(flags)
        if kind in ("deployment", "deployments"):
            dep = self.state.find_deployment(ns, name)
            if dep is None:
                raise _CommandError(f'Error from server (NotFound): deployments.apps "{name}" not found')
            return self._describe_deployment(dep)
        if kind in ("pod", "pods"):
            pod = self.state.find_pod(ns, name)
            if pod is None:
                raise _CommandError(f'Error from server (NotFound): pods "{name}" not found')
            return self._describe_pod(pod)
        raise _CommandError(f'error: the server doesn\'t have a resource type "{kind}"')

    def _container_section(self, dep: cl.Deployment) -> list[str]:
        res = dep.resources
        lines = [
            f"   {dep.name}:",
            f"    Image:      {dep.image}",
            f"    Port:       {dep.port}/TCP",
        ]
        if dep.command:
            lines.append("    Command:")
            lines.append(f"      {dep.command}")
        if dep.args:
            lines.append("    Args:")
            lines.extend(f"      {arg}" for arg in dep.args)
        lines.append("    Limits:")
        lines.append(f"      cpu:     {cl.format_cpu(res.cpu_limit)}")
        lines.append(f"      memory:  {cl.format_mem(res.mem_limit)}")
        lines.append("    Requests:")
        lines.append(f"      cpu:     {cl.format_cpu(res.cpu_request)}")
        lines.append(f"      memory:  {cl.format_mem(res.mem_request)}")
        for probe in dep.probes:
            label = "Liveness" if probe.kind == "liveness" else "Readiness"
            lines.append(
                f"    {label}:{' ' * (12 - len(label) - 1)}"
                f"http-get http://:{dep.port}{probe.http_path} "
                f"delay={_fmt_secs(probe.initial_delay)} timeout={_fmt_secs(probe.timeout)} "
                f"period={_fmt_secs(probe.period)} "
                f"#success={probe.success_threshold} #failure={probe.failure_threshold}"
            )
        return lines

    def _describe_deployment(self, dep: cl.Deployment) -> str:
        pods = self.state.deployment_pods(dep)
        ready = sum(1 for p in pods if p.phase == "Running")
        labels = ",".join(f"{k}={v}" for k, v in sorted(dep.labels.items())) or "<none>"
        lines = [
            f"Name:                   {dep.name}",
            f"Namespace:              {dep.namespace}",
            f"Labels:                 {labels}",
            f"Selector:               {labels}",
            f"Replicas:               {dep.replicas} desired | {dep.replicas} updated | "
            f"{len(pods)} total | {ready} available | {dep.replicas - ready} unavailable",
            "Pod Template:",
            f"  Labels:  {labels}",
            "  Containers:",
        ]
        lines.extend(self._container_section(dep))
        return "\n".join(lines)

    def _describe_pod(self, pod: cl.Pod) -> str:
        dep = self.state.find_deployment(pod.namespace, pod.deployment)
        labels = {}
        if dep is not None:
            labels = dict(dep.labels)
            labels["pod-template-hash"] = dep.pod_template_hash
        label_text = ",".join(f"{k}={v}" for k, v in sorted(labels.items())) or "<none>"
        lines = [
            f"Name:             {pod.name}",
            f"Namespace:        {pod.namespace}",
            f"Status:           {pod.phase}",
            f"Controlled By:    Deployment/{pod.deployment}",
            f"Labels:           {label_text}",
            "Containers:",
        ]
        if dep is not None:
            lines.extend(self._container_section(dep))
        return "\n".join(lines)

    # top

    def _top(self, positionals: list[str], flags: dict) -> str:
        if not positionals or positionals[0] not in ("pod", "pods"):
            raise _CommandError("error: top supports pods only")
        if not self.state.metrics_available:
            raise _CommandError("Metrics API not available")
        ns = self._namespace(flags)
        pods = sorted((p for p in self.state.pods if p.namespace == ns), key=lambda p: p.name)
        if len(positionals) > 1:
            name = positionals[1]
            pods = [p for p in pods if p.name == name]
            if not pods:
                raise _CommandError(f'Error from server (NotFound): pods "{name}" not found')
        if not pods:
            return "No resources found."
        rows = [["NAME", "CPU(cores)", "MEMORY(bytes)"]]
        for pod in pods:
            rows.append(
                [pod.name, f"{pod.usage_cpu_millicores}m", cl.format_mem_mi(pod.usage_mem_bytes)]
            )
        return _columns(rows)

    # write verbs

    def _scale(self, positionals: list[str], flags: dict) -> str:
        if len(positionals) != 2 or positionals[0] not in ("deployment", "deployments"):
            raise _CommandError("error: scale takes: deployment NAME --replicas=K")
        if "replicas" not in flags:
            raise _CommandError("error: --replicas is required")
        try:
            replicas = int(flags["replicas"])
        except ValueError:
            raise _CommandError(f"error: invalid replicas {flags['replicas']!r}") from None
        ns = self._namespace(flags)
        name = positionals[1]
        self._mutate("scale", {"namespace": ns, "name": name, "replicas": replicas})
        return f"deployment.apps/{name} scaled"

    def _set(self, positionals: list[str], flags: dict) -> str:
        if len(positionals) != 3 or positionals[0] != "resources" or positionals[1] not in ("deployment", "deployments"):
            raise _CommandError("error: set supports: resources deployment NAME")
        if "requests" not in flags and "limits" not in flags:
            raise _CommandError("error: at least one of --requests or --limits is required")
        ns = self._namespace(flags)
        name = positionals[2]
        args: dict = {"namespace": ns, "name": name}
        if "requests" in flags:
            args["requests"] = _parse_quantities(flags["requests"])
        if "limits" in flags:
            args["limits"] = _parse_quantities(flags["limits"])
        self._mutate("set_resources", args)
        return f"deployment.apps/{name} resource requirements updated"

    def _label(self, positionals: list[str], flags: dict) -> str:
        if len(positionals) != 3 or positionals[0] not in ("deployment", "deployments"):
            raise _CommandError("error: label takes: deployment NAME KEY=VALUE")
        name = positionals[1]
        key, eq, value = positionals[2].partition("=")
        if not eq or not key:
            raise _CommandError(f"error: bad label spec {positionals[2]!r}")
        ns = self._namespace(flags)
        dep = self.state.find_deployment(ns, name)
        if dep is None:
            raise _CommandError(f'Error from server (NotFound): deployments.apps "{name}" not found')
        if key in dep.labels and not flags.get("overwrite"):
            raise _CommandError(
                f"error: '{key}' already has a value ({dep.labels[key]}), and --overwrite is false"
            )
        self._mutate("set_label", {"namespace": ns, "name": name, "key": key, "value": value})
        return f"deployment.apps/{name} labeled"

    def _patch(self, positionals: list[str], flags: dict) -> str:
        if len(positionals) != 2 or positionals[0] not in ("deployment", "deployments"):
            raise _CommandError("error: patch takes: deployment NAME -p '<json>'")
        if "patch" not in flags:
            raise _CommandError("error: -p is required")
        try:
            patch = json.loads(flags["patch"])
        except json.JSONDecodeError as exc:
            raise _CommandError(f"error: cannot parse patch: {exc}") from None
        ns = self._namespace(flags)
        name = positionals[1]
        self._mutate("patch", {"namespace": ns, "name": name, "patch": patch})
        return f"deployment.apps/{name} patched"

    def _delete(self, positionals: list[str], flags: dict) -> str:
        if len(positionals) != 2 or positionals[0] not in ("pod", "pods"):
            raise _CommandError("error: delete supports pods only")
        ns = self._namespace(flags)
        name = positionals[1]
        self._mutate("kill_pod", {"namespace": ns, "pod": name})
        return f'pod "{name}" deleted'


def _fmt_secs(value: float) -> str:
    return f"{int(value)}s" if value == int(value) else f"{value}s"
