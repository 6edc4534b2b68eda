"""Regenerate the hand-curated CoNLL-U fixtures under fixtures/.

Row syntax here: "index word POS dep head". Sentences are lowercase,
punctuation-free referring expressions in the style of natural image
region descriptions.
"""

import os

SENTENCES = [
    ("refg-001", "a woman holding a remote",
     ["1 a DET det 2", "2 woman NOUN root 0", "3 holding VERB acl 2",
      "4 a DET det 5", "5 remote NOUN dobj 3"]),
    ("refg-002", "the man in the red shirt",
     ["1 the DET det 2", "2 man NOUN root 0", "3 in ADP prep 2",
      "4 the DET det 6", "5 red ADJ amod 6", "6 shirt NOUN pobj 3"]),
    ("refg-003", "a large pizza on a white plate",
     ["1 a DET det 3", "2 large ADJ amod 3", "3 pizza NOUN root 0",
      "4 on ADP prep 3", "5 a DET det 7", "6 white ADJ amod 7",
      "7 plate NOUN pobj 4"]),
    ("refg-004", "the dog lying on the grass",
     ["1 the DET det 2", "2 dog NOUN root 0", "3 lying VERB acl 2",
      "4 on ADP prep 3", "5 the DET det 6", "6 grass NOUN pobj 4"]),
    ("refg-005", "a girl wearing a blue dress holding an umbrella",
     ["1 a DET det 2", "2 girl NOUN root 0", "3 wearing VERB acl 2",
      "4 a DET det 6", "5 blue ADJ amod 6", "6 dress NOUN dobj 3",
      "7 holding VERB acl 2", "8 an DET det 9", "9 umbrella NOUN dobj 7"]),
    ("refg-006", "the cat sitting on the left chair",
     ["1 the DET det 2", "2 cat NOUN root 0", "3 sitting VERB acl 2",
      "4 on ADP prep 3", "5 the DET det 7", "6 left ADJ amod 7",
      "7 chair NOUN pobj 4"]),
    ("refg-007", "a man riding a horse near the fence",
     ["1 a DET det 2", "2 man NOUN root 0", "3 riding VERB acl 2",
      "4 a DET det 5", "5 horse NOUN dobj 3", "6 near ADP prep 3",
      "7 the DET det 8", "8 fence NOUN pobj 6"]),
    ("refg-008", "the second zebra from the right",
     ["1 the DET det 3", "2 second ADJ amod 3", "3 zebra NOUN root 0",
      "4 from ADP prep 3", "5 the DET det 6", "6 right NOUN pobj 4"]),
    ("refg-009", "a bowl of broccoli next to the rice",
     ["1 a DET det 2", "2 bowl NOUN root 0", "3 of ADP prep 2",
      "4 broccoli NOUN pobj 3", "5 next ADJ prep 2", "6 to ADP prep 5",
      "7 the DET det 8", "8 rice NOUN pobj 6"]),
    ("refg-010", "the tall giraffe bending its neck",
     ["1 the DET det 3", "2 tall ADJ amod 3", "3 giraffe NOUN root 0",
      "4 bending VERB acl 3", "5 its PRON poss 6", "6 neck NOUN dobj 4"]),
    ("refg-011", "a baseball player swinging a bat",
     ["1 a DET det 3", "2 baseball NOUN compound 3", "3 player NOUN root 0",
      "4 swinging VERB acl 3", "5 a DET det 6", "6 bat NOUN dobj 4"]),
    ("refg-012", "the empty bench beside the tree",
     ["1 the DET det 3", "2 empty ADJ amod 3", "3 bench NOUN root 0",
      "4 beside ADP prep 3", "5 the DET det 6", "6 tree NOUN pobj 4"]),
    ("refg-013", "a laptop on the desk that is open",
     ["1 a DET det 2", "2 laptop NOUN root 0", "3 on ADP prep 2",
      "4 the DET det 5", "5 desk NOUN pobj 3", "6 that PRON nsubj 8",
      "7 is AUX cop 8", "8 open ADJ acl:relcl 2"]),
    ("refg-014", "the bus parked behind the silver car",
     ["1 the DET det 2", "2 bus NOUN root 0", "3 parked VERB acl 2",
      "4 behind ADP prep 3", "5 the DET det 7", "6 silver ADJ amod 7",
      "7 car NOUN pobj 4"]),
    ("refg-015", "a slice of cake on a small plate",
     ["1 a DET det 2", "2 slice NOUN root 0", "3 of ADP prep 2",
      "4 cake NOUN pobj 3", "5 on ADP prep 2", "6 a DET det 8",
      "7 small ADJ amod 8", "8 plate NOUN pobj 5"]),
    ("refg-016", "the player in white jumping for the ball",
     ["1 the DET det 2", "2 player NOUN root 0", "3 in ADP prep 2",
      "4 white NOUN pobj 3", "5 jumping VERB acl 2", "6 for ADP prep 5",
      "7 the DET det 8", "8 ball NOUN pobj 6"]),
    ("refg-017", "an elephant standing in the water facing left",
     ["1 an DET det 2", "2 elephant NOUN root 0", "3 standing VERB acl 2",
      "4 in ADP prep 3", "5 the DET det 6", "6 water NOUN pobj 4",
      "7 facing VERB acl 2", "8 left ADV advmod 7"]),
    ("refg-018", "the darker horse grazing near the white one",
     ["1 the DET det 3", "2 darker ADJ amod 3", "3 horse NOUN root 0",
      "4 grazing VERB acl 3", "5 near ADP prep 4", "6 the DET det 8",
      "7 white ADJ amod 8", "8 one NOUN pobj 5"]),
    ("refg-019", "a kid on a skateboard wearing a green helmet",
     ["1 a DET det 2", "2 kid NOUN root 0", "3 on ADP prep 2",
      "4 a DET det 5", "5 skateboard NOUN pobj 3", "6 wearing VERB acl 2",
      "7 a DET det 9", "8 green ADJ amod 9", "9 helmet NOUN dobj 6"]),
    ("refg-020", "the chair closest to the camera",
     ["1 the DET det 2", "2 chair NOUN root 0", "3 closest ADJ amod 2",
      "4 to ADP prep 3", "5 the DET det 6", "6 camera NOUN pobj 4"]),
]

WOMAN_REMOTE = (
    "woman-remote",
    "a woman with flowers on her sweater holding a remote",
    ["1 a DET det 2", "2 woman NOUN root 0", "3 with ADP prep 2",
     "4 flowers NOUN pobj 3", "5 on ADP prep 4", "6 her PRON poss 7",
     "7 sweater NOUN pobj 5", "8 holding VERB acl 2",
     "9 a DET det 8", "10 remote NOUN dobj 8"],
    ["# note = determiner of the held object attaches to the clause head"
     " so the object node stays a leaf"],
)

PUNCT = (
    "punct-001",
    "the red ball .",
    ["1 the DET det 3", "2 red ADJ amod 3", "3 ball NOUN root 0",
     "4 . PUNCT punct 3"],
    [],
)


def block(sent_id, text, rows, extra_comments=()):
    lines = [f"# sent_id = {sent_id}", f"# text = {text}"]
    lines.extend(extra_comments)
    for row in rows:
        index, word, pos, dep, head = row.split(" ")
        lines.append("\t".join([index, word, "_", pos, "_", "_", head, dep, "_", "_"]))
    return "\n".join(lines) + "\n"


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "fixtures")
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "refg_sample.conllu"), "w", encoding="utf-8") as f:
        f.write("\n".join(block(s, t, rows) for s, t, rows in SENTENCES))
    with open(os.path.join(out_dir, "woman_remote.conllu"), "w", encoding="utf-8") as f:
        sent_id, text, rows, comments = WOMAN_REMOTE
        f.write(block(sent_id, text, rows, comments))
    with open(os.path.join(out_dir, "punct_sample.conllu"), "w", encoding="utf-8") as f:
        sent_id, text, rows, comments = PUNCT
        f.write(block(sent_id, text, rows, comments))
    print("fixtures written to", os.path.abspath(out_dir))


if __name__ == "__main__":
    main()
