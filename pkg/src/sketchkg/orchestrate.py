"""Prompt assembly for reference-guided diagram generation, and the HTTP client contract.

Templates are plain text files (``<name>.system.txt`` / ``<name>.user.txt``)
read from the packaged ``prompts`` directory or from an override directory,
so wording can change without touching code.
"""

from __future__ import annotations

import json
import logging
import os
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources

from .exceptions import InputError, IoFailure, MissingTemplate, NoReferences
from .hashing import fnv1a_64

logger = logging.getLogger(__name__)

GENERATOR_SYSTEM = "You are a scientific diagram generation assistant."
SECTION_SEPARATOR = "\n\n---\n\n"


class TemplateStore:
    """Loads ``<name>.<part>.txt`` from ``directory`` or the packaged defaults."""

    def __init__(self, directory=None):
        self.directory = directory

    def load(self, name, part):
        fname = f"{name}.{part}.txt"
        try:
            if self.directory is not None:
                with open(os.path.join(self.directory, fname), encoding="utf-8") as fh:
                    text = fh.read()
            else:
                text = resources.files("sketchkg.prompts").joinpath(fname).read_text("utf-8")
        except (OSError, FileNotFoundError) as exc:
            raise MissingTemplate(f"template {fname} not found") from exc
        return text[:-1] if text.endswith("\n") else text

    def pair(self, name):
        return self.load(name, "system"), self.load(name, "user")

    def prototypes(self):
        fname = "prototypes.json"
        try:
            if self.directory is not None:
                with open(os.path.join(self.directory, fname), encoding="utf-8") as fh:
                    return json.load(fh)
            return json.loads(resources.files("sketchkg.prompts").joinpath(fname).read_text("utf-8"))
        except (OSError, FileNotFoundError) as exc:
            raise MissingTemplate(f"{fname} not found") from exc


DEFAULT_TEMPLATES = TemplateStore()


@dataclass
class AgentFlags:
    planning: bool = True
    guidance: bool = True


@dataclass
class PromptBundle:
    plan_text: str
    style_text: str
    sketch_ref: str
    reference_refs: list = field(default_factory=list)
    agent_flags: AgentFlags = field(default_factory=AgentFlags)

    def __post_init__(self):
        if not self.agent_flags.planning and self.plan_text:
            raise InputError("plan_text must be empty when planning is off")
        if not self.agent_flags.guidance and self.style_text:
            raise InputError("style_text must be empty when guidance is off")


@dataclass
class GenerationRequest:
    system_text: str
    user_text: str
    attachments: list
    target_model: str
    request_id: str

    def payload(self):
        return {"request_id": self.request_id, "model": self.target_model,
                "system": self.system_text, "user": self.user_text,
                "attachments": list(self.attachments)}

    def to_dict(self):
        return asdict(self)


def _join(system, user):
    return f"{system}\n\n{user}"


def build_plan_prompt(sketch_ref, references=(), enabled=True, templates=DEFAULT_TEMPLATES):
    """Structural planning instructions; references travel as attachments, not text."""
    if not sketch_ref:
        raise InputError("sketch_ref is required")
    if not enabled:
        return ""
    return _join(*templates.pair("plan"))


def build_style_prompt(references, enabled=True, templates=DEFAULT_TEMPLATES):
    if not enabled:
        return ""
    if not references:
        raise NoReferences("style guidance needs at least one reference")
    return _join(*templates.pair("style"))


def build_bundle(sketch_ref, references, flags=None, templates=DEFAULT_TEMPLATES):
    flags = flags or AgentFlags()
    refs = list(references)
    return PromptBundle(build_plan_prompt(sketch_ref, refs, flags.planning, templates),
                        build_style_prompt(refs, flags.guidance, templates),
                        sketch_ref, refs, flags)


def canonical_json(obj):
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def assemble_generation_request(bundle, target_model):
    """Plan text, then style text, then the attachments: sketch first, references in rank order."""
    user = SECTION_SEPARATOR.join(t for t in (bundle.plan_text, bundle.style_text) if t)
    attachments = [bundle.sketch_ref, *bundle.reference_refs]
    body = {"model": target_model, "system": GENERATOR_SYSTEM, "user": user,
            "attachments": attachments}
    rid = f"{fnv1a_64(canonical_json(body)):016x}"
    return GenerationRequest(GENERATOR_SYSTEM, user, attachments, target_model, rid)


def build_verification_request(image_ref, target_model, templates=DEFAULT_TEMPLATES):
    """Chat request asking a vision-language model for a keep/drop verdict on one image."""
    system, user = templates.pair("filter")
    body = {"model": target_model, "system": system, "user": user, "attachments": [image_ref]}
    rid = f"{fnv1a_64(canonical_json(body)):016x}"
    return GenerationRequest(system, user, [image_ref], target_model, rid)


class GenerationClient:
    """POSTs requests to ``{endpoint}/generate``.

    Response body: ``{"request_id", "artifact_ref", "status"}``; chat-style
    services may also return ``"text"``.  Retries resend the same request_id.
    """

    def __init__(self, endpoint, timeout_ms=60000, retries=2, api_key=None, backoff_s=0.5):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_ms = timeout_ms
        self.retries = retries
        self.api_key = api_key
        self.backoff_s = backoff_s

    def submit(self, request):
        data = json.dumps(request.payload(), ensure_ascii=False).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(f"{self.endpoint}/generate", data=data, headers=headers,
                                         method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
                    body = json.loads(resp.read().decode("utf-8"))
                if not isinstance(body, dict) or body.get("request_id") != request.request_id:
                    raise InputError(f"response does not echo request {request.request_id}")
                return body
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                last = exc
                logger.warning("generate %s failed (attempt %d): %s",
                               request.request_id, attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(self.backoff_s * (2 ** attempt))
        raise IoFailure(f"generation service unreachable: {last}")

    def submit_many(self, requests, jobs=1):
        """Submit with at most ``jobs`` in flight; results come back in input order."""
        requests = list(requests)
        if jobs <= 1:
            return [self.submit(r) for r in requests]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(self.submit, requests))
