"""Building full commonsense instances from segment triplets.

Each triplet becomes one record carrying the grounded description of the
current event, its action-object pair, and the five inference sets (goals,
preconditions, effects, before events, after events). Records sharing an
action-object pair are then merged across videos so that one pair accumulates
the plausible inferences from every recipe it occurs in.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from typing import Mapping, Protocol

from .corpus import Corpus, FrameRef, ObjectAnnotation, middle_frame, slice_transcript
from .triplets import SegmentTriplet

GOAL_TEMPLATES = ("Make {}", "Cook {}", "Prepare {}")

# One question per surface attribute the narration typically describes.
EFFECT_QUESTIONS = (
    ("color", "What color is {}?"),
    ("texture", "What texture is {}?"),
    ("shape", "What shape is {}?"),
    ("attribute", "What attribute is related to {}?"),
    ("property", "What property is related to {}?"),
)
MAX_EFFECT_TOKENS = 5

FLAG_TEXT_ONLY = "text-only"
FLAG_NO_OBJECTS = "no_objects"
FLAG_NO_TRANSCRIPT = "no_transcript"

OBJECT_TAG_RE = re.compile(r"\[Object(\d+)\]")
_DETERMINERS = frozenset({"a", "an", "the", "some"})

_IRREGULAR_NOUNS = {
    "knives": "knife",
    "leaves": "leaf",
    "loaves": "loaf",
    "halves": "half",
    "children": "child",
}


class RCProvider(Protocol):
    def answer(self, context: str, question: str) -> str | None: ...


def simple_lemma(word: str) -> str:
    """Cheap noun lemmatizer used for mention matching and dedup keys."""
    w = word.lower()
    if w in _IRREGULAR_NOUNS:
        return _IRREGULAR_NOUNS[w]
    if len(w) > 4 and w.endswith("ies"):
        return w[:-3] + "y"
    if len(w) > 3 and (
        w.endswith("oes")
        or w.endswith("shes")
        or w.endswith("ches")
        or w.endswith("sses")
        or w.endswith("xes")
        or w.endswith("zes")
    ):
        return w[:-2]
    if len(w) > 3 and w.endswith("s") and not (w.endswith("ss") or w.endswith("us") or w.endswith("is")):
        return w[:-1]
    return w


def normalize_phrase(text: str) -> str:
    """Dedup key: lowercase, strip punctuation, lemmatize the head word."""
    words = re.sub(r"[^\w\s]", " ", text.lower()).split()
    if not words:
        return ""
    words[-1] = simple_lemma(words[-1])
    return " ".join(words)


@dataclass(frozen=True)
class GroundedText:
    """Sentence with object mentions rewritten as numbered tags.

    ``bindings`` maps every assigned tag to its annotation; tags whose object
    never occurs in the text are listed in ``image_only_tags`` and exist only
    for vision grounding.
    """

    template: str
    bindings: dict[str, ObjectAnnotation] = field(default_factory=dict)
    image_only_tags: frozenset[str] = frozenset()

    def __post_init__(self):
        for tag in OBJECT_TAG_RE.findall(self.template):
            if f"[Object{tag}]" not in self.bindings:
                raise ValueError(f"template tag [Object{tag}] has no binding")

    def label_bindings(self) -> list[tuple[str, str]]:
        return [(tag, ann.label) for tag, ann in self.bindings.items()]

    def deground(self) -> str:
        """The template with tags substituted back by their object labels."""
        text = self.template
        for tag, ann in self.bindings.items():
            text = text.replace(tag, ann.label)
        return text


@dataclass(frozen=True)
class ProvenanceEntry:
    video_id: str
    triplet: SegmentTriplet
    image: FrameRef | None = None


@dataclass(frozen=True)
class CommonsenseInstance:
    instance_id: str
    image: FrameRef | None
    text_description: str
    action_object: tuple[str, str]
    goals: frozenset[str]
    preconditions: frozenset[str]
    effects: frozenset[str]
    before_events: frozenset[str]
    after_events: frozenset[str]
    provenance: tuple[ProvenanceEntry, ...]
    bindings: tuple[tuple[str, str], ...] = ()  # tag -> object label
    flags: tuple[str, ...] = ()

    def inference_set(self, inference_type: str) -> frozenset[str]:
        return {
            "goal": self.goals,
            "precondition": self.preconditions,
            "effect": self.effects,
            "before": self.before_events,
            "after": self.after_events,
        }[inference_type]


def _strip_token(token: str) -> tuple[str, str]:
    """Split a token into its core word and trailing punctuation."""
    core = token.rstrip(string.punctuation)
    return core, token[len(core):]


def form_textual_description(
    triplet: SegmentTriplet,
    corpus: Corpus,
    resolved: Mapping[tuple[str, int], str] | None = None,
) -> GroundedText:
    """Ground the current-event sentence against its object annotations.

    Every mention of an annotated object (matched by lemma, longest label
    first, with a leading determiner absorbed) is replaced by a numbered tag;
    repeats of the same object reuse their tag. Objects that never occur in
    the text still receive tags, marked image-only, so the vision side can
    reference them. Grounding is best effort: zero matches just yields
    tag-free text.
    """
    video = corpus.video(triplet.video_id)
    segment = video.segment(triplet.current.segment_index)
    sentence = (resolved or {}).get((triplet.video_id, segment.index), segment.sentence)

    tokens = sentence.split()
    cores = [simple_lemma(_strip_token(t)[0]) for t in tokens]
    labels = sorted(
        {obj.label: obj for obj in segment.objects}.items(),
        key=lambda kv: -len(kv[0].split()),
    )

    matched: list[tuple[int, int, str]] = []  # (start, end, label)
    taken = [False] * len(tokens)
    for label, _ in labels:
        parts = [simple_lemma(p) for p in label.lower().split()]
        width = len(parts)
        for start in range(0, len(tokens) - width + 1):
            if any(taken[start : start + width]):
                continue
            if cores[start : start + width] == parts:
                matched.append((start, start + width, label))
                for i in range(start, start + width):
                    taken[i] = True

    matched.sort()
    tag_by_label: dict[str, str] = {}
    for _, _, label in matched:
        if label not in tag_by_label:
            tag_by_label[label] = f"[Object{len(tag_by_label) + 1}]"

    out_tokens: list[str] = []
    cursor = 0
    for start, end, label in matched:
        out_tokens.extend(tokens[cursor:start])
        if out_tokens and out_tokens[-1].lower() in _DETERMINERS:
            out_tokens.pop()
        _, trail = _strip_token(tokens[end - 1])
        out_tokens.append(tag_by_label[label] + trail)
        cursor = end
    out_tokens.extend(tokens[cursor:])

    annotations = {obj.label: obj for obj in segment.objects}
    bindings = {tag: annotations[label] for label, tag in tag_by_label.items()}
    image_only = []
    for obj in segment.objects:
        if obj.label not in tag_by_label:
            tag = f"[Object{len(bindings) + 1}]"
            bindings[tag] = obj
            image_only.append(tag)

    return GroundedText(
        template=" ".join(out_tokens),
        bindings=bindings,
        image_only_tags=frozenset(image_only),
    )


def form_action_object_pair(triplet: SegmentTriplet) -> tuple[str, str]:
    """The current event's primary verb and ingredient lemmas.

    When several verbs act on the ingredient in the current segment, the
    first verb in sentence order wins; instruments never appear because
    events only carry the noun undergoing the action.
    """
    return (triplet.current.verb, triplet.current.ingredient)


def form_goal(triplet: SegmentTriplet, corpus: Corpus) -> frozenset[str]:
    """The three recipe-level goal strings for the triplet's video."""
    video = corpus.video(triplet.video_id)
    name = corpus.index.name(video.recipe_id)
    return frozenset(t.format(name) for t in GOAL_TEMPLATES)


def form_preconditions(triplet: SegmentTriplet, corpus: Corpus) -> frozenset[str]:
    """Union of object labels annotated on the past and current segments."""
    video = corpus.video(triplet.video_id)
    labels: dict[str, str] = {}
    for index in (triplet.past.segment_index, triplet.current.segment_index):
        for obj in video.segment(index).objects:
            labels.setdefault(normalize_phrase(obj.label), obj.label)
    return frozenset(labels.values())


def _filter_effect_answer(answer: str, keyword: str) -> list[str]:
    words = answer.lower().split()
    if len(words) > MAX_EFFECT_TOKENS:
        return []
    if keyword in words or "what" in words:
        return []
    return [piece.strip() for piece in re.split(r",| and | or ", answer) if piece.strip()]


def extract_effects(
    triplet: SegmentTriplet, corpus: Corpus, rc: RCProvider
) -> frozenset[str]:
    """Mine post-action object states from narration after the current event.

    The context is the transcript between the start of the current segment
    and the start of the future segment; each attribute question is put to
    the reading-comprehension provider and answers are split on conjunctions,
    length-filtered, and deduplicated.
    """
    video = corpus.video(triplet.video_id)
    current = video.segment(triplet.current.segment_index)
    future = video.segment(triplet.future.segment_index)
    window = slice_transcript(video, current.t_start, future.t_start)
    if not window.text:
        return frozenset()

    effects: dict[str, str] = {}
    for keyword, template in EFFECT_QUESTIONS:
        answer = rc.answer(window.text, template.format(triplet.ingredient))
        if answer is None:
            continue
        for piece in _filter_effect_answer(answer, keyword):
            effects.setdefault(normalize_phrase(piece), piece)
    return frozenset(effects.values())


def form_before_after(
    triplet: SegmentTriplet,
    corpus: Corpus,
    resolved: Mapping[tuple[str, int], str] | None = None,
) -> tuple[str, str]:
    """Descriptions of the past and future events, preferring resolved text."""
    video = corpus.video(triplet.video_id)
    resolved = resolved or {}

    def sentence_at(index: int) -> str:
        return resolved.get((triplet.video_id, index), video.segment(index).sentence)

    return (
        sentence_at(triplet.past.segment_index),
        sentence_at(triplet.future.segment_index),
    )


def _slug(verb: str, ingredient: str) -> str:
    return f"{verb}_{ingredient}".replace(" ", "-")


def build_instance(
    triplet: SegmentTriplet,
    corpus: Corpus,
    rc: RCProvider | None = None,
    resolved: Mapping[tuple[str, int], str] | None = None,
    fps: float = 30.0,
) -> CommonsenseInstance:
    """Assemble one instance from a triplet; flags record missing components."""
    video = corpus.video(triplet.video_id)
    current = video.segment(triplet.current.segment_index)

    flags = []
    image = None
    if video.media is not None and current.index in video.media.clip_paths:
        image = middle_frame(video.media, current, fps=fps, video_id=video.video_id)
    else:
        flags.append(FLAG_TEXT_ONLY)

    grounded = form_textual_description(triplet, corpus, resolved)
    verb, ingredient = form_action_object_pair(triplet)
    goals = form_goal(triplet, corpus)
    preconditions = form_preconditions(triplet, corpus)
    if not preconditions:
        flags.append(FLAG_NO_OBJECTS)

    if rc is None:
        effects = frozenset()
    else:
        effects = extract_effects(triplet, corpus, rc)
    window = slice_transcript(
        video, current.t_start, video.segment(triplet.future.segment_index).t_start
    )
    if not window.text:
        flags.append(FLAG_NO_TRANSCRIPT)

    before, after = form_before_after(triplet, corpus, resolved)

    return CommonsenseInstance(
        instance_id=f"{triplet.video_id}:{current.index}:{_slug(verb, ingredient)}",
        image=image,
        text_description=grounded.template,
        action_object=(verb, ingredient),
        goals=goals,
        preconditions=preconditions,
        effects=effects,
        before_events=frozenset({before}),
        after_events=frozenset({after}),
        provenance=(ProvenanceEntry(video_id=triplet.video_id, triplet=triplet, image=image),),
        bindings=tuple(grounded.label_bindings()),
        flags=tuple(flags),
    )


def _normalized_union(sets) -> frozenset[str]:
    """Union with dedup by normalized form, keeping a stable representative."""
    groups: dict[str, list[str]] = {}
    for texts in sets:
        for text in texts:
            groups.setdefault(normalize_phrase(text), []).append(text)
    return frozenset(min(texts) for texts in groups.values())


def merge_by_action_object(instances) -> list[CommonsenseInstance]:
    """Union the inference sets of instances sharing an action-object pair.

    Single-source pairs pass through unchanged; merged records keep the first
    source's image and description as representative and concatenate
    provenance in input order. Idempotent, and order-insensitive over the
    inference sets.
    """
    groups: dict[tuple[str, str], list[CommonsenseInstance]] = {}
    for instance in instances:
        groups.setdefault(instance.action_object, []).append(instance)

    merged = []
    for pair, group in groups.items():
        if len(group) == 1:
            merged.append(group[0])
            continue
        first = group[0]
        flags = sorted(set(f for inst in group for f in inst.flags) - {FLAG_TEXT_ONLY})
        image = next((inst.image for inst in group if inst.image is not None), None)
        if image is None:
            flags.append(FLAG_TEXT_ONLY)
        merged.append(
            CommonsenseInstance(
                instance_id=_slug(*pair),
                image=image,
                text_description=first.text_description,
                action_object=pair,
                goals=_normalized_union(i.goals for i in group),
                preconditions=_normalized_union(i.preconditions for i in group),
                effects=_normalized_union(i.effects for i in group),
                before_events=_normalized_union(i.before_events for i in group),
                after_events=_normalized_union(i.after_events for i in group),
                provenance=tuple(p for i in group for p in i.provenance),
                bindings=first.bindings,
                flags=tuple(flags),
            )
        )
    return merged


@dataclass(frozen=True)
class StatsReport:
    """Corpus-level dataset statistics.

    Goal, precondition, and effect totals sum the per-pair inference sets;
    before/after totals count one event per source triplet, so the two are
    always equal. Distinct images can undercount triplets because triplets
    from the same current segment share a frame; the note records this.
    """

    videos: int
    images: int
    textual_descriptions: int
    recipe_types: int
    unique_objects: int
    unique_actions: int
    goals: int
    preconditions: int
    effects: int
    before_events: int
    after_events: int
    notes: tuple[str, ...] = ()

    ROW_LABELS = (
        ("videos", "Videos"),
        ("images", "Images"),
        ("textual_descriptions", "Textual Descriptions"),
        ("recipe_types", "Recipe Types"),
        ("unique_objects", "Unique Objects"),
        ("unique_actions", "Unique Actions"),
        ("goals", "High-level Goals"),
        ("preconditions", "Pre-conditions"),
        ("effects", "Effects"),
        ("before_events", "Before Events"),
        ("after_events", "After Events"),
    )

    def rows(self) -> list[tuple[str, int]]:
        return [(label, getattr(self, fieldname)) for fieldname, label in self.ROW_LABELS]

    def to_dict(self) -> dict:
        out = {fieldname: getattr(self, fieldname) for fieldname, _ in self.ROW_LABELS}
        out["notes"] = list(self.notes)
        return out


def compute_statistics(instances) -> StatsReport:
    """One-pass dataset statistics over (possibly merged) instances."""
    videos = set()
    frames = set()
    descriptions = set()
    triplet_count = 0
    for instance in instances:
        for entry in instance.provenance:
            videos.add(entry.video_id)
            descriptions.add((entry.video_id, entry.triplet.current.segment_index))
            if entry.image is not None:
                frames.add(entry.image.key)
            triplet_count += 1

    recipes = {g[len("Make "):] for i in instances for g in i.goals if g.startswith("Make ")}

    return StatsReport(
        videos=len(videos),
        images=len(frames),
        textual_descriptions=len(descriptions),
        recipe_types=len(recipes),
        unique_objects=len({i.action_object[1] for i in instances}),
        unique_actions=len({i.action_object[0] for i in instances}),
        goals=sum(len(i.goals) for i in instances),
        preconditions=sum(len(i.preconditions) for i in instances),
        effects=sum(len(i.effects) for i in instances),
        before_events=triplet_count,
        after_events=triplet_count,
        notes=(
            "before/after totals count one event per source triplet",
            "distinct frames may undercount triplets sharing a current segment",
        ),
    )


def _frame_to_dict(frame: FrameRef | None):
    if frame is None:
        return None
    return {
        "video_id": frame.video_id,
        "segment_index": frame.segment_index,
        "frame_index": frame.frame_index,
        "timestamp": frame.timestamp,
        "clip_path": frame.clip_path,
        "frame_path": frame.frame_path,
    }


def _frame_from_dict(raw) -> FrameRef | None:
    if raw is None:
        return None
    return FrameRef(
        video_id=raw["video_id"],
        segment_index=raw["segment_index"],
        frame_index=raw["frame_index"],
        timestamp=raw["timestamp"],
        clip_path=raw.get("clip_path"),
        frame_path=raw.get("frame_path"),
    )


def instance_to_dict(instance: CommonsenseInstance) -> dict:
    return {
        "instance_id": instance.instance_id,
        "image": _frame_to_dict(instance.image),
        "text_description": instance.text_description,
        "action_object": list(instance.action_object),
        "goals": sorted(instance.goals),
        "preconditions": sorted(instance.preconditions),
        "effects": sorted(instance.effects),
        "before_events": sorted(instance.before_events),
        "after_events": sorted(instance.after_events),
        "provenance": [
            {
                "video_id": entry.video_id,
                "triplet": entry.triplet.to_dict(),
                "image": _frame_to_dict(entry.image),
            }
            for entry in instance.provenance
        ],
        "bindings": [list(b) for b in instance.bindings],
        "flags": list(instance.flags),
    }


def instance_from_dict(raw: dict) -> CommonsenseInstance:
    return CommonsenseInstance(
        instance_id=raw["instance_id"],
        image=_frame_from_dict(raw.get("image")),
        text_description=raw["text_description"],
        action_object=tuple(raw["action_object"]),
        goals=frozenset(raw["goals"]),
        preconditions=frozenset(raw["preconditions"]),
        effects=frozenset(raw["effects"]),
        before_events=frozenset(raw["before_events"]),
        after_events=frozenset(raw["after_events"]),
        provenance=tuple(
            ProvenanceEntry(
                video_id=entry["video_id"],
                triplet=SegmentTriplet.from_dict(entry["triplet"]),
                image=_frame_from_dict(entry.get("image")),
            )
            for entry in raw.get("provenance", [])
        ),
        bindings=tuple((tag, label) for tag, label in raw.get("bindings", [])),
        flags=tuple(raw.get("flags", [])),
    )


def write_dataset(instances, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for instance in instances:
            fh.write(json.dumps(instance_to_dict(instance), ensure_ascii=False) + "\n")


def read_dataset(path) -> list[CommonsenseInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(instance_from_dict(json.loads(line)))
    return out


def seeded_video_split(
    instances, seed: int, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
) -> dict[str, list[CommonsenseInstance]]:
    """Seeded by-video train/val/test split (a convention of this toolkit).

    Instances follow the split of their first provenance video so merged
    records land in exactly one partition.
    """
    import random

    videos = sorted({i.provenance[0].video_id for i in instances})
    rng = random.Random(f"split:{seed}")
    rng.shuffle(videos)
    n = len(videos)
    n_train = round(n * ratios[0])
    n_val = round(n * ratios[1])
    assignment = {}
    for pos, video_id in enumerate(videos):
        if pos < n_train:
            assignment[video_id] = "train"
        elif pos < n_train + n_val:
            assignment[video_id] = "val"
        else:
            assignment[video_id] = "test"
    out: dict[str, list[CommonsenseInstance]] = {"train": [], "val": [], "test": []}
    for instance in instances:
        out[assignment[instance.provenance[0].video_id]].append(instance)
    return out
