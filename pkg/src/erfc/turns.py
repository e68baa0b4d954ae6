"""Assembly of diarized utterances into paired speaker turns.

A *run* is a maximal block of consecutive utterances by one speaker.  Runs
are paired in order, (run 2i, run 2i+1) becoming turn i, so slot 0 always
belongs to the conversation's first speaker.  A trailing unpaired run
yields a final turn whose other side is marked absent; downstream code
masks that side's targets.

Per-side label lifting: mode of the utterance labels, ties broken by the
longest-duration utterance among the tied labels, then by earliest start.
AVD is lifted as the duration-weighted mean of the utterances that carry
it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .corpus import AvdTriple, Conversation, UtteranceRecord


@dataclass
class SpeakerTurnSide:
    """One speaker's half of a turn (possibly absent on the final turn)."""

    slot: int
    speaker: Optional[str]
    utt_ids: list[str] = field(default_factory=list)
    merged_text: str = ""
    label: Optional[str] = None
    avd: Optional[AvdTriple] = None
    present: bool = True


@dataclass
class Turn:
    conv_id: str
    turn_index: int
    sides: list[SpeakerTurnSide]

    def side(self, slot: int) -> SpeakerTurnSide:
        return self.sides[slot]


def split_runs(conversation: Conversation) -> list[list[UtteranceRecord]]:
    """Split a conversation into maximal same-speaker runs, in time order."""
    runs: list[list[UtteranceRecord]] = []
    for utt in conversation.utterances:
        if runs and runs[-1][-1].speaker == utt.speaker:
            runs[-1].append(utt)
        else:
            runs.append([utt])
    return runs


def lift_labels(run: list[UtteranceRecord]) -> tuple[str, Optional[AvdTriple]]:
    """Lift per-utterance labels/AVD of a single-speaker run to one pair."""
    if not run:
        raise ValueError("cannot lift labels of an empty run")
    counts: dict[str, int] = {}
    for u in run:
        counts[u.emotion] = counts.get(u.emotion, 0) + 1
    top = max(counts.values())
    tied = {label for label, c in counts.items() if c == top}
    # Tie-break: longest utterance among the tied labels, then earliest.
    winner = min(
        (u for u in run if u.emotion in tied),
        key=lambda u: (-u.duration, u.t_start),
    )
    label = winner.emotion

    weights = [(u.duration, u.avd) for u in run if u.avd is not None]
    if weights:
        total = sum(w for w, _ in weights)
        acc = [0.0, 0.0, 0.0]
        for w, avd in weights:
            for i, v in enumerate(avd.as_list()):
                acc[i] += w * v
        avd_lifted = AvdTriple(*(a / total for a in acc))
    else:
        avd_lifted = None
    return label, avd_lifted


def concat_text(run: list[UtteranceRecord]) -> str:
    """Join utterance texts in time order; null texts contribute nothing."""
    if not run:
        raise ValueError("cannot concatenate an empty run")
    return " ".join(u.text for u in run if u.text)


def _side_from_run(slot: int, run: list[UtteranceRecord]) -> SpeakerTurnSide:
    label, avd = lift_labels(run)
    return SpeakerTurnSide(
        slot=slot,
        speaker=run[0].speaker,
        utt_ids=[u.utt_id for u in run],
        merged_text=concat_text(run),
        label=label,
        avd=avd,
        present=True,
    )


def assemble_turns(conversation: Conversation) -> list[Turn]:
    """Pair same-speaker runs into turns; pure function of input order."""
    if not conversation.utterances:
        raise ValueError(f"conversation {conversation.conv_id!r} is empty")
    runs = split_runs(conversation)
    speakers = conversation.speakers
    turns: list[Turn] = []
    for i in range(0, len(runs), 2):
        idx = i // 2
        side0 = _side_from_run(0, runs[i])
        if i + 1 < len(runs):
            side1 = _side_from_run(1, runs[i + 1])
        else:
            other = speakers[1] if runs[i][0].speaker == speakers[0] else speakers[0]
            side1 = SpeakerTurnSide(slot=1, speaker=other, present=False)
        turns.append(Turn(conversation.conv_id, idx, [side0, side1]))
    return turns


def assemble_corpus(conversations: list[Conversation]) -> dict[str, list[Turn]]:
    """Assemble turns for every conversation, keyed by conv_id."""
    return {conv.conv_id: assemble_turns(conv) for conv in conversations}


def dump_turns_csv(turns_by_conv: dict[str, list[Turn]], path: str | Path) -> None:
    """Audit dump: conv_id, turn, slot, speaker, n_utts, label."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["conv_id", "turn", "slot", "speaker", "n_utts", "label"])
        for conv_id in sorted(turns_by_conv):
            for turn in turns_by_conv[conv_id]:
                for side in turn.sides:
                    writer.writerow(
                        [
                            conv_id,
                            turn.turn_index,
                            side.slot,
                            side.speaker or "",
                            len(side.utt_ids),
                            side.label or "",
                        ]
                    )
