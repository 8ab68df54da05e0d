"""Builds the bundled synthetic corpus and its gold labels.

Every template sentence carries hand-assigned labels. A report is a random
selection of sentences; its gold vector aggregates the sentence labels
(positive > uncertain > negative) and derives no_finding. The labeler is
never consulted, so the gold file is an independent reference.

    python3 scripts/synth_corpus.py data/
"""

import csv
import json
import random
import sys
from pathlib import Path

CLASSES = [
    "atelectasis", "cardiomegaly", "consolidation", "edema",
    "enlarged_cardiomediastinum", "fracture", "lung_lesion", "lung_opacity",
    "no_finding", "pleural_effusion", "pleural_other", "pneumonia",
    "pneumothorax", "support_devices",
]
RANK = {"P": 3, "U": 2, "N": 1}
CELL = {"P": "1.0", "N": "0.0", "U": "-1.0", None: ""}

SENTENCES = [
    ("Keine pleuralen Ergüsse.", {"pleural_effusion": "N"}),
    ("Kein Pneumothorax.", {"pneumothorax": "N"}),
    ("Keine pleurale Dehiszenz im Sinne eines Pneumothorax.", {"pneumothorax": "N"}),
    ("Herz normal groß.", {"cardiomegaly": "N"}),
    ("Herz vergrößert.", {"cardiomegaly": "P"}),
    ("Kardiomegalie.", {"cardiomegaly": "P"}),
    ("Herz grenzwertig groß.", {"cardiomegaly": "U"}),
    ("Geringe pulmonalvenöse Stauung.", {"edema": "P"}),
    ("Keine Stauungszeichen.", {"edema": "N"}),
    ("Kardiopulmonal kompensiert.", {"edema": "N"}),
    ("Kein Lungenödem.", {"edema": "N"}),
    ("V.a. beginnendes Lungenödem.", {"edema": "U"}),
    ("Lungenödem unwahrscheinlich.", {"edema": "U"}),
    ("Stauung nicht mehr nachweisbar.", {"edema": "N"}),
    ("Mediastinum schlank.", {"enlarged_cardiomediastinum": "N"}),
    ("Mediastinum verbreitert.", {"enlarged_cardiomediastinum": "P"}),
    ("Mediastinum im Liegen verbreitert.", {"enlarged_cardiomediastinum": "U"}),
    ("Keine Fraktur abgrenzbar.", {"fracture": "N"}),
    ("Kein Hinweis auf Fraktur.", {"fracture": "N"}),
    ("Rippenfraktur rechts.", {"fracture": "P"}),
    ("Ältere Rippenfrakturen links.", {"fracture": "P"}),
    ("Fragliche Rippenfraktur links.", {"fracture": "U"}),
    ("Kein Rundherd.", {"lung_lesion": "N"}),
    ("Rundherd im rechten Oberfeld.", {"lung_lesion": "P"}),
    ("Fraglicher Rundherd links basal.", {"lung_lesion": "U"}),
    ("Raumforderung im linken Oberlappen.", {"lung_lesion": "P"}),
    ("Noduli beidseits.", {"lung_lesion": "P"}),
    ("Keine umschriebenen Infiltrate.", {"lung_opacity": "N", "pneumonia": "N"}),
    ("Transparenzminderung rechts basal.", {"lung_opacity": "P"}),
    ("Streifige Verschattung links.", {"lung_opacity": "P"}),
    ("Lunge seitengleich transparent.", {"lung_opacity": "N"}),
    ("Mögliche Infiltrate links basal.", {"lung_opacity": "U", "pneumonia": "U"}),
    ("Infiltrat rechts nicht mehr abgrenzbar.", {"lung_opacity": "N", "pneumonia": "N"}),
    ("Infiltrat im Sinne einer Pneumonie.", {"lung_opacity": "P", "pneumonia": "P"}),
    ("Pneumonisches Infiltrat rechts.", {"lung_opacity": "P", "pneumonia": "P"}),
    ("Zunehmende Transparenzminderung rechts basal, DD Pneumonie.", {"lung_opacity": "P", "pneumonia": "U"}),
    ("Pneumonie nicht ausgeschlossen.", {"pneumonia": "U"}),
    ("Keine Pneumonie.", {"pneumonia": "N"}),
    ("Kein Anhalt für Pneumonie.", {"pneumonia": "N"}),
    ("Bronchopneumonie rechts.", {"pneumonia": "P"}),
    ("Randwinkel frei.", {"pleural_effusion": "N"}),
    ("Recessus beidseits frei.", {"pleural_effusion": "N"}),
    ("Kleiner Pleuraerguss rechts.", {"pleural_effusion": "P"}),
    ("Geringe Pleuraergüsse beidseits.", {"pleural_effusion": "P"}),
    ("Randwinkel überlagert.", {"pleural_effusion": "U"}),
    ("Erguss ausgeschlossen.", {"pleural_effusion": "N"}),
    ("Pleuraschwiele links apikal.", {"pleural_other": "P"}),
    ("Keine Pleuraverdickung.", {"pleural_other": "N"}),
    ("Fragliche Pleuraverdickung rechts.", {"pleural_other": "U"}),
    ("Spitzenpneu rechts.", {"pneumothorax": "P"}),
    ("Pneumothorax unwahrscheinlich.", {"pneumothorax": "U"}),
    ("Herzschrittmacher links pektoral.", {"support_devices": "P"}),
    ("ZVK von rechts jugulär mit Spitze in der VCS.", {"support_devices": "P"}),
    ("Magensonde regelrecht.", {"support_devices": "P"}),
    ("Thoraxdrainage entfernt.", {"support_devices": "N"}),
    ("Tubus mit Spitze 4 cm oberhalb der Carina.", {"support_devices": "P"}),
    ("Sternalcerclagen.", {"support_devices": "P"}),
    ("Portkatheter von links mit Spitze in der VCS.", {"support_devices": "P"}),
    ("Sondenlage fraglich.", {"support_devices": "U"}),
    ("Minderbelüftung links basal.", {"atelectasis": "P"}),
    ("Keine Atelektasen.", {"atelectasis": "N"}),
    ("Plattenatelektase rechts basal.", {"atelectasis": "P"}),
    ("Am ehesten Dystelektase links basal.", {"atelectasis": "U"}),
    ("Konsolidierung im rechten Unterlappen.", {"consolidation": "P"}),
    ("Keine Konsolidierung.", {"consolidation": "N"}),
    ("Verdacht auf Konsolidierung links.", {"consolidation": "U"}),
    ("Herz normgroß, Mediastinum schlank.", {"cardiomegaly": "N", "enlarged_cardiomediastinum": "N"}),
    ("Keine Stauung, keine Ergüsse.", {"edema": "N", "pleural_effusion": "N"}),
    ("Kein Erguss, kein Pneumothorax.", {"pleural_effusion": "N", "pneumothorax": "N"}),
    ("Herz grenzwertig groß, keine Stauung.", {"cardiomegaly": "U", "edema": "N"}),
    ("Kardiomegalie ohne Stauungszeichen.", {"cardiomegaly": "P", "edema": "N"}),
    ("Regelrechte Lage der einliegenden Materialien.", {}),
    ("Zum Vergleich liegt eine Voraufnahme vor.", {}),
    ("Unveränderte Darstellung.", {}),
]

VIEWS = ["Thorax im Liegen", "Thorax p.a. und seitlich", "Thorax im Sitzen", None]


def gold_row(labels):
    merged = {}
    for sentence_labels in labels:
        for cls, pol in sentence_labels.items():
            if cls not in merged or RANK[pol] > RANK[merged[cls]]:
                merged[cls] = pol
    blocking = any(
        merged.get(c) in ("P", "U") for c in CLASSES if c not in ("no_finding", "support_devices")
    )
    merged["no_finding"] = "N" if blocking else "P"
    return [CELL[merged.get(c)] for c in CLASSES]


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20210524)
    reports = []
    # Every sentence appears at least once on its own, then random mixes.
    picks = [[i] for i in range(len(SENTENCES))]
    while len(picks) < 120:
        picks.append(rng.sample(range(len(SENTENCES)), rng.randint(2, 6)))
    for n, pick in enumerate(picks):
        text = " ".join(SENTENCES[i][0] for i in pick)
        reports.append((f"syn-{n:03d}", rng.choice(VIEWS), text, [SENTENCES[i][1] for i in pick]))

    with open(out / "corpus.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for rid, view, text, _ in reports:
            record = {"report_id": rid, "text": text}
            if view is not None:
                record["view_position"] = view
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    with open(out / "gold.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["report_id"] + CLASSES)
        for rid, _, _, labels in reports:
            w.writerow([rid] + gold_row(labels))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data")
