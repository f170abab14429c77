"""Counterfactual prompt construction through an LLM endpoint.

The pipeline asks a chat-completions endpoint to first analyze the
physical content of a user prompt (entities, environment, interactions,
temporal evolution) and then write one counterfactual version that
keeps the same entities and scene while clearly violating the governing
physical process. Responses must follow a strict two-section format so
they can be parsed mechanically; parsed records pass through cheap
lexical quality heuristics, and failures land in a quarantine file
instead of the corpus.

The shipped instruction template is version 1; any change to its text
should bump DEFAULT_TEMPLATE_VERSION so downstream corpora stay
auditable.
"""

import json
import os
import threading
import time
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import requests

__all__ = [
    "ANALYSIS_MARKER",
    "COUNTERFACTUAL_MARKER",
    "SUBFIELD_LABELS",
    "ParTemplate",
    "Analysis",
    "CounterfactualRecord",
    "LlmEndpointConfig",
    "ValidationCheck",
    "ValidationReport",
    "FormatViolation",
    "TransportError",
    "ValidationFailure",
    "MockTransport",
    "HttpTransport",
    "default_template",
    "build_instruction",
    "parse_response",
    "render_record",
    "validate_record",
    "generate",
    "generate_batch",
    "record_to_json",
    "record_from_json",
]

DEFAULT_TEMPLATE_VERSION = "1"

ANALYSIS_MARKER = "[ANALYSIS]"
COUNTERFACTUAL_MARKER = "[COUNTERFACTUAL]"
SUBFIELD_LABELS = ("Entities:", "Environment:", "Interactions:", "Temporal evolution:")

_STOP_WORDS = frozenset(
    """a an the is are was were be been being of in on at as to from with and or its
    it this that these those by for any all no not into upon over under while when
    then than there here their his her our your one two very each both some such
    through during before after again more most other only own same so too can will
    just should now""".split()
)

_VIOLATION_MARKERS = (
    "without",
    "instead",
    "instantly",
    "never",
    "no ",
    "not ",
    "despite",
    "from the start",
    "from the beginning",
    "remains",
    "already",
    "spontaneously",
    "reverses",
    "defies",
)


class FormatViolation(ValueError):
    """Raised when a response does not follow the strict output format.

    The missing attribute names the first absent marker or subfield.
    """

    def __init__(self, missing: str, detail: str = ""):
        self.missing = missing
        msg = f"format violation: missing {missing}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TransportError(RuntimeError):
    """Raised when the endpoint cannot be reached or returns garbage."""


class ValidationFailure(RuntimeError):
    """Raised when a parsed record fails the quality heuristics."""

    def __init__(self, reasons):
        self.reasons = list(reasons)
        super().__init__("validation failed: " + "; ".join(self.reasons))


@dataclass(frozen=True)
class ParTemplate:
    """Instruction template: system framing, rules, and the strict format spec."""

    system_text: str
    requirements: tuple
    output_format_spec: str

    def __post_init__(self):
        object.__setattr__(self, "requirements", tuple(self.requirements))
        for marker in (ANALYSIS_MARKER, COUNTERFACTUAL_MARKER):
            if marker not in self.output_format_spec:
                raise ValueError(f"output_format_spec must define the {marker} section")


@dataclass(frozen=True)
class Analysis:
    """The four structured reasoning subfields extracted from a response."""

    entities: str
    environment: str
    interactions: str
    temporal_evolution: str


@dataclass(frozen=True)
class CounterfactualRecord:
    user_prompt: str
    analysis: Analysis
    counterfactual: str
    model_id: str = ""
    created_at: str = ""


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "GUIDELAB_API_KEY"
    timeout: float = 60.0
    max_retries: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    reason: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple
    passed: bool

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


_WORKED_EXAMPLE = """Worked example.
User prompt: A timelapse captures the gradual transformation of butter as the temperature rises significantly.
Response:
[ANALYSIS]
Entities: a block of butter, a heat source
Environment: a warm surface whose temperature climbs steadily over the timelapse
Interactions: heat transfers into the butter and drives a solid-to-liquid phase transition
Temporal evolution: the butter first softens at the edges, then progressively melts and spreads into a liquid pool
[COUNTERFACTUAL]
The butter is fully liquefied from the start, with no observable melting process."""


def default_template() -> ParTemplate:
    """The bundled instruction template (version 1)."""
    system_text = (
        "You prepare counterfactual captions for physics-focused video generation.\n"
        "Given a user prompt describing a scene, first analyze its physical content,"
        " then write exactly one counterfactual version of the prompt.\n\n" + _WORKED_EXAMPLE
    )
    requirements = (
        "Keep the same entities and setting as the original prompt.",
        "Do not repeat or trivially rephrase the original prompt.",
        "The counterfactual must stay visually plausible while clearly violating the physical law governing the scene.",
        "Target the physical process identified in the analysis, not an unrelated one.",
    )
    output_format_spec = (
        "Respond in exactly this format:\n"
        "[ANALYSIS]\n"
        "Entities: <entities present in the scene>\n"
        "Environment: <environmental conditions>\n"
        "Interactions: <how the entities interact physically>\n"
        "Temporal evolution: <how the scene evolves over time>\n"
        "[COUNTERFACTUAL]\n"
        "<one counterfactual version of the prompt>"
    )
    return ParTemplate(system_text=system_text, requirements=requirements, output_format_spec=output_format_spec)


def build_instruction(template: ParTemplate, user_prompt: str) -> list:
    """Compose the chat messages for one generation call.

    The system message carries the template framing, the numbered
    requirements, and the format spec; the user prompt goes through
    verbatim as the user message.
    """
    if not user_prompt or not user_prompt.strip():
        raise ValueError("user_prompt must be nonempty")
    rules = "\n".join(f"{i + 1}. {r}" for i, r in enumerate(template.requirements))
    system = f"{template.system_text}\n\nRequirements:\n{rules}\n\n{template.output_format_spec}"
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user_prompt},
    ]


def _split_sections(text: str) -> tuple:
    lines = text.splitlines()
    try:
        a = next(i for i, ln in enumerate(lines) if ln.strip() == ANALYSIS_MARKER)
    except StopIteration:
        raise FormatViolation(ANALYSIS_MARKER) from None
    try:
        c = next(i for i, ln in enumerate(lines) if i > a and ln.strip() == COUNTERFACTUAL_MARKER)
    except StopIteration:
        raise FormatViolation(COUNTERFACTUAL_MARKER) from None
    return lines[a + 1:c], "\n".join(lines[c + 1:]).strip()


def _parse_subfields(analysis_lines: list) -> dict:
    found = {}
    current = None
    for ln in analysis_lines:
        stripped = ln.strip()
        matched = None
        for label in SUBFIELD_LABELS:
            if stripped.startswith(label):
                matched = label
                break
        if matched is not None:
            current = matched
            found[current] = stripped[len(matched):].strip()
        elif current is not None and stripped:
            found[current] = (found[current] + "\n" + stripped).strip()
    for label in SUBFIELD_LABELS:
        key = label.rstrip(":")
        if label not in found:
            raise FormatViolation(key, "subfield absent from analysis section")
        if not found[label]:
            raise FormatViolation(key, "subfield present but empty")
    return found


def parse_response(
    text: str,
    template: ParTemplate,
    user_prompt: str = "",
    model_id: str = "",
    created_at: str = "",
) -> CounterfactualRecord:
    """Parse a strict-format response into a record.

    Raises FormatViolation naming the first missing marker or subfield.
    Whitespace around every extracted value is trimmed.
    """
    analysis_lines, counterfactual = _split_sections(text)
    fields = _parse_subfields(analysis_lines)
    if not counterfactual:
        raise FormatViolation("counterfactual", "section present but empty")
    analysis = Analysis(
        entities=fields["Entities:"],
        environment=fields["Environment:"],
        interactions=fields["Interactions:"],
        temporal_evolution=fields["Temporal evolution:"],
    )
    return CounterfactualRecord(
        user_prompt=user_prompt,
        analysis=analysis,
        counterfactual=counterfactual,
        model_id=model_id,
        created_at=created_at,
    )


def render_record(rec: CounterfactualRecord) -> str:
    """Render a record back to the strict response format.

    parse_response of the rendered text reproduces the record exactly
    (round-trip identity for valid records).
    """
    return (
        f"{ANALYSIS_MARKER}\n"
        f"Entities: {rec.analysis.entities}\n"
        f"Environment: {rec.analysis.environment}\n"
        f"Interactions: {rec.analysis.interactions}\n"
        f"Temporal evolution: {rec.analysis.temporal_evolution}\n"
        f"{COUNTERFACTUAL_MARKER}\n"
        f"{rec.counterfactual}"
    )


def _content_words(text: str) -> set:
    words = "".join(ch if ch.isalnum() else " " for ch in text.lower()).split()
    return {w for w in words if len(w) > 2 and w not in _STOP_WORDS}


def _normalize(text: str) -> str:
    return " ".join("".join(ch if ch.isalnum() else " " for ch in text.lower()).split())


def validate_record(rec: CounterfactualRecord, entity_threshold: int = 1) -> ValidationReport:
    """Run the lexical quality heuristics; reports, never throws.

    Checks: (a) the counterfactual shares at least entity_threshold
    content words with the user prompt, (b) it carries a
    negation/violation marker or at least differs from a naive
    restatement, (c) it does not repeat the user prompt.
    """
    shared = _content_words(rec.user_prompt) & _content_words(rec.counterfactual)
    overlap = ValidationCheck(
        name="entity_overlap",
        passed=len(shared) >= entity_threshold,
        reason=(f"shared content words: {sorted(shared)}" if shared else "no shared content words"),
    )
    cf_lower = rec.counterfactual.lower()
    markers = [m for m in _VIOLATION_MARKERS if m in cf_lower]
    differs = _normalize(rec.counterfactual) != _normalize(rec.user_prompt)
    violation = ValidationCheck(
        name="violation_marker",
        passed=bool(markers) or differs,
        reason=(f"markers found: {markers}" if markers else
                ("differs from a naive restatement" if differs else "restates the prompt with no violation cue")),
    )
    repetition = ValidationCheck(
        name="non_repetition",
        passed=differs,
        reason=("counterfactual differs from the prompt" if differs else "counterfactual repeats the user prompt"),
    )
    checks = (overlap, violation, repetition)
    return ValidationReport(checks=checks, passed=all(c.passed for c in checks))


class MockTransport:
    """Canned responses keyed by user prompt, for offline runs and tests."""

    def __init__(self, responses: dict):
        self.responses = dict(responses)
        self.calls = 0

    @classmethod
    def from_dir(cls, path) -> "MockTransport":
        """Load fixture pairs <name>.prompt.txt / <name>.response.txt from a directory."""
        path = Path(path)
        responses = {}
        for prompt_file in sorted(path.glob("*.prompt.txt")):
            response_file = prompt_file.with_name(prompt_file.name.replace(".prompt.txt", ".response.txt"))
            if not response_file.exists():
                raise FileNotFoundError(f"fixture {prompt_file.name} has no matching response file")
            responses[prompt_file.read_text().strip()] = response_file.read_text()
        if not responses:
            raise FileNotFoundError(f"no *.prompt.txt fixtures found in {path}")
        return cls(responses)

    def __call__(self, messages: list, cfg: LlmEndpointConfig) -> str:
        self.calls += 1
        prompt = next((m["content"] for m in reversed(messages) if m["role"] == "user"), None)
        if prompt is None or prompt.strip() not in self.responses:
            raise TransportError(f"no canned response for prompt {prompt!r}")
        return self.responses[prompt.strip()]


class HttpTransport:
    """Live chat-completions client: POST {base_url}/v1/chat/completions."""

    def __init__(self, temperature: float = 0.2):
        self.temperature = temperature

    def __call__(self, messages: list, cfg: LlmEndpointConfig) -> str:
        token = os.environ.get(cfg.api_key_env)
        if not token:
            raise TransportError(f"environment variable {cfg.api_key_env} is not set")
        url = cfg.base_url.rstrip("/") + "/v1/chat/completions"
        body = {"model": cfg.model, "messages": messages, "temperature": self.temperature}
        try:
            resp = requests.post(
                url,
                json=body,
                headers={"Authorization": f"Bearer {token}"},
                timeout=cfg.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"request to {url} failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"endpoint returned status {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def record_to_json(rec: CounterfactualRecord) -> dict:
    return asdict(rec)


def record_from_json(d: dict) -> CounterfactualRecord:
    return CounterfactualRecord(
        user_prompt=d["user_prompt"],
        analysis=Analysis(**d["analysis"]),
        counterfactual=d["counterfactual"],
        model_id=d.get("model_id", ""),
        created_at=d.get("created_at", ""),
    )


def _append_jsonl(path, obj: dict, lock: Optional[threading.Lock] = None) -> None:
    line = json.dumps(obj, sort_keys=True)
    if lock is None:
        with open(path, "a") as fh:
            fh.write(line + "\n")
    else:
        with lock:
            with open(path, "a") as fh:
                fh.write(line + "\n")


def _call_with_retries(cfg, template, user_prompt, transport, retry_on_format, sleep, clock):
    messages = build_instruction(template, user_prompt)
    attempts = 1 + cfg.max_retries
    last_exc = None
    for attempt in range(attempts):
        if attempt > 0:
            sleep(0.5 * 2 ** (attempt - 1))
        try:
            text = transport(messages, cfg)
        except TransportError as exc:
            last_exc = exc
            continue
        try:
            return parse_response(text, template, user_prompt=user_prompt,
                                  model_id=cfg.model, created_at=clock())
        except FormatViolation as exc:
            if not retry_on_format:
                raise
            last_exc = exc
            continue
    raise last_exc


def generate(
    cfg: LlmEndpointConfig,
    template: ParTemplate,
    user_prompt: str,
    transport: Callable,
    corpus_path=None,
    quarantine_path=None,
    retry_on_format: bool = False,
    sleep: Callable = time.sleep,
    clock: Callable = _utc_now,
) -> CounterfactualRecord:
    """Build the instruction, call the endpoint, parse, validate, persist.

    Transport errors are retried up to cfg.max_retries with exponential
    backoff; format violations are not retried unless retry_on_format
    is set. A record failing validation is appended to quarantine_path
    with its reasons and ValidationFailure is raised; a passing record
    is appended to corpus_path. Pass a fixed clock for byte-reproducible
    records.
    """
    rec = _call_with_retries(cfg, template, user_prompt, transport, retry_on_format, sleep, clock)
    report = validate_record(rec)
    if not report.passed:
        reasons = [f"{c.name}: {c.reason}" for c in report.failures()]
        if quarantine_path is not None:
            _append_jsonl(quarantine_path, {"record": record_to_json(rec), "reasons": reasons})
        raise ValidationFailure(reasons)
    if corpus_path is not None:
        _append_jsonl(corpus_path, record_to_json(rec))
    return rec


def generate_batch(
    cfg: LlmEndpointConfig,
    template: ParTemplate,
    user_prompts: list,
    transport: Callable,
    corpus_path=None,
    quarantine_path=None,
    jobs: int = 1,
    retry_on_format: bool = False,
    sleep: Callable = time.sleep,
    clock: Callable = _utc_now,
) -> list:
    """Generate for a prompt batch, optionally with bounded parallelism.

    Returns one (prompt, status, detail) tuple per prompt with status
    in {ok, transport_error, format_violation, validation_failure}.
    Endpoint calls may run concurrently; corpus and quarantine appends
    happen in the submitting thread, so the files stay well-formed.
    """
    def call_one(prompt):
        return _call_with_retries(cfg, template, prompt, transport, retry_on_format, sleep, clock)

    def settle(prompt, outcome):
        if isinstance(outcome, TransportError):
            return (prompt, "transport_error", str(outcome))
        if isinstance(outcome, FormatViolation):
            return (prompt, "format_violation", str(outcome))
        rec = outcome
        report = validate_record(rec)
        if not report.passed:
            reasons = [f"{c.name}: {c.reason}" for c in report.failures()]
            if quarantine_path is not None:
                _append_jsonl(quarantine_path, {"record": record_to_json(rec), "reasons": reasons})
            return (prompt, "validation_failure", "; ".join(reasons))
        if corpus_path is not None:
            _append_jsonl(corpus_path, record_to_json(rec))
        return (prompt, "ok", rec.counterfactual)

    results = []
    if jobs <= 1:
        for prompt in user_prompts:
            try:
                results.append(settle(prompt, call_one(prompt)))
            except (TransportError, FormatViolation) as exc:
                results.append(settle(prompt, exc))
        return results

    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(call_one, p) for p in user_prompts]
        for prompt, fut in zip(user_prompts, futures):
            try:
                outcome = fut.result()
            except (TransportError, FormatViolation) as exc:
                outcome = exc
            results.append(settle(prompt, outcome))
    return results
