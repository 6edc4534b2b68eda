"""Bridge between the fixture tool and spaCy.

Reads one JSON request on stdin and writes one JSON response on stdout.
Exit code 3 means spaCy (or the requested model) is not usable on this
machine; the caller turns that into ParserUnavailable.

Request:  {"action": "probe"|"parse", "model": str, "sentences": [str]}
Response: {"version": str, "model": str} for probe;
          {"sentences": [{"tokens": [{"word","pos","dep","head"}]}]} for parse.
"""

import json
import sys


def unavailable(reason):
    print(reason, file=sys.stderr)
    sys.exit(3)


def main():
    request = json.load(sys.stdin)
    model_name = request.get("model", "en_core_web_sm")
    try:
        import spacy
    except ImportError:
        unavailable("spaCy is not installed")
    try:
        nlp = spacy.load(model_name)
    except OSError:
        unavailable(f"spaCy model {model_name!r} is not installed")

    if request["action"] == "probe":
        json.dump({"version": spacy.__version__, "model": model_name}, sys.stdout)
        return

    sentences = []
    for doc in nlp.pipe(request["sentences"]):
        tokens = []
        for token in doc:
            head = 0 if token.head is token else token.head.i + 1
            tokens.append(
                {
                    "word": token.text,
                    "pos": token.pos_,
                    "dep": token.dep_,
                    "head": head,
                }
            )
        sentences.append({"tokens": tokens})
    json.dump({"sentences": sentences}, sys.stdout)


if __name__ == "__main__":
    main()
