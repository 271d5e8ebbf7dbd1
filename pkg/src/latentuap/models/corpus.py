"""Toy speech corpus: seeded phrase list rendered by the formant TTS."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..audio_io import AudioClip, Manifest, ManifestEntry, save_clip, write_manifest
from . import tts

log = logging.getLogger(__name__)

TARGET_TEXTS = (
    "call my wife",
    "make it warmer",
    "navigate to my home",
    "open the door",
    "open the website",
    "play music",
    "send a text",
    "take a picture",
    "turn off the light",
    "turn on airplane mode",
)

VOCABULARY = """
about above across after again air all almost alone along also always among and animal another answer any
apple area arm around ask away baby back bad bag ball bank base bear beat bed before begin behind bell best
better big bird black blue boat body book both box boy bread break bright bring brown build busy but buy cake
call came car care carry case cat catch chair change child city class clean clear close cloud cold color come
cook cool corn cost could country cover cross cup cut dark day deep desk dog door down draw dream dress drink
drive dry each early earth east easy eat edge egg end even ever every eye face fall farm fast father feel
field fill find fine fire first fish five floor fly food foot for forest found four free fresh friend from
front fruit full game garden gate give glad glass gold good grass great green ground group grow hair half
hand happy hard have head hear heavy help here high hill hold home hope horse hot hour house huge idea inch
island jump just keep key kind king kitchen know lake lamp land large last late laugh lazy leaf learn left
letter light like line lion list little long look love low lucky make man many map market middle milk mind
minute money moon more morning mother mountain move music name near never new next nice night noise north
number ocean office old open orange other over page paper park party path pen people pick piece place plant
play please point pool quick quiet rain read red rest rich ride right river road rock room round run safe
salt same sand say school sea seat see send shape ship shoe short show side simple sing sit sky sleep slow
small smile snow soft some song soon sound south space speak spring square stand star start stay step stone
stop story street strong sugar summer sun sweet table take talk tall tea team tell ten thank that the then
thing think this three time today together town tree true turn under until use valley very voice wait walk
wall warm wash watch water wave way week well west wet what wheel when where white who wide wild wind window
winter with wood word work world write yard year yellow young zero zone quiz jazz box fox quilt zebra
""".split()

MIN_SECONDS = 1.0
MAX_SECONDS = 5.0


def _fits(phrase: str) -> bool:
    # worst-case tempo, jitter and padding must still land inside 1-5 s
    return 1.35 <= tts.estimated_duration(phrase) <= 3.75


def phrase_list(n: int, seed: int = 0, exclude: set[str] | frozenset[str] = frozenset()) -> list[str]:
    """Distinct phrases whose estimated duration lies in 1-5 s."""
    rng = np.random.default_rng([seed, 0x9A11])
    out: list[str] = []
    seen = set(exclude)
    while len(out) < n:
        k = int(rng.integers(1, 8))
        words = [VOCABULARY[int(i)] for i in rng.integers(len(VOCABULARY), size=k)]
        phrase = " ".join(words)
        if phrase in seen or not _fits(phrase):
            continue
        seen.add(phrase)
        out.append(phrase)
    return out


def corpus_phrases(n_train: int = 500, n_test: int = 200, seed: int = 0) -> tuple[list[str], list[str]]:
    """Disjoint train/test phrase lists; the train list covers every letter."""
    train = phrase_list(n_train, seed)
    # alphabet coverage for the recogniser: splice a covering word into
    # existing phrases, trimming words until the duration filter passes
    missing = set(tts.ALPHABET[1:]) - set("".join(train))
    i = 0
    for word in VOCABULARY:
        if not set(word) & missing or i >= len(train):
            continue
        words = train[i].split()
        while words and not _fits(" ".join([word] + words)):
            words.pop()
        candidate = " ".join([word] + words)
        if _fits(candidate) and candidate not in train:
            train[i] = candidate
            missing -= set(word)
        i += 1
    test = phrase_list(n_test, seed + 1, exclude=set(train))
    return train, test


def synthesize_clips(phrases, seed_offset: int, split: str) -> list[AudioClip]:
    clips = []
    for i, text in enumerate(phrases):
        wave = tts.synthesize(text, style_seed=seed_offset + i)
        clips.append(AudioClip(wave, tts.RATE, text, f"{split}-{i:04d}"))
    return clips


def build_corpus(root, n_train: int = 500, n_test: int = 200, seed: int = 0) -> dict[str, Manifest]:
    """Render the corpus as 16-bit WAV files plus one manifest per split."""
    root = Path(root)
    train, test = corpus_phrases(n_train, n_test, seed)
    manifests = {}
    # speaker seeds of the test split never occur in training
    for split, phrases, offset in (("train", train, 10_000 * (seed + 1)), ("test", test, 10_000 * (seed + 1) + 5_000)):
        entries = []
        for clip in synthesize_clips(phrases, offset, split):
            rel = Path(split) / f"{clip.id}.wav"
            save_clip(clip, root / rel)
            entries.append(ManifestEntry(str(rel), clip.transcript, clip.duration))
        m = Manifest(entries, split, root=root, min_duration=MIN_SECONDS, max_duration=MAX_SECONDS)
        m.validate()
        write_manifest(m, root / f"{split}.jsonl")
        manifests[split] = m
        log.info("wrote %d %s clips under %s", len(entries), split, root)
    return manifests
