"""Regenerates the bundled synthetic suite (graph, dataset, transcripts, pairs).

Run from this directory: python3 generate.py
The scorer is trained separately with `iquest train-scorer` (see README).
"""
import json
import os

FILMS = [
    # id, title, director, composer, lead actor
    ("m.f_inception", "Inception", "m.p_nolan", "m.p_zimmer", "m.p_dicaprio"),
    ("m.f_titanic", "Titanic", "m.p_cameron", "m.p_horner", "m.p_winslet"),
    ("m.f_jaws", "Jaws", "m.p_spielberg", "m.p_williams", "m.p_scheider"),
    ("m.f_gump", "Forrest Gump", "m.p_zemeckis", "m.p_silvestri", "m.p_hanks"),
    ("m.f_potter", "Harry Potter and the Philosopher's Stone", "m.p_columbus", "m.p_williams", "m.p_radcliffe"),
]
PEOPLE = {
    "m.p_nolan": ("Christopher Nolan", "m.c_london"),
    "m.p_cameron": ("James Cameron", "m.c_kapuskasing"),
    "m.p_spielberg": ("Steven Spielberg", "m.c_cincinnati"),
    "m.p_zemeckis": ("Robert Zemeckis", "m.c_chicago"),
    "m.p_columbus": ("Chris Columbus", "m.c_spangler"),
    "m.p_zimmer": ("Hans Zimmer", "m.c_frankfurt"),
    "m.p_horner": ("James Horner", "m.c_los_angeles"),
    "m.p_williams": ("John Williams", "m.c_new_york"),
    "m.p_silvestri": ("Alan Silvestri", "m.c_new_york"),
    "m.p_dicaprio": ("Leonardo DiCaprio", "m.c_los_angeles"),
    "m.p_winslet": ("Kate Winslet", "m.c_reading"),
    "m.p_scheider": ("Roy Scheider", "m.c_orange_nj"),
    "m.p_hanks": ("Tom Hanks", "m.c_concord"),
    "m.p_radcliffe": ("Daniel Radcliffe", "m.c_london"),
}
CITIES = {
    "m.c_london": ("London", "m.n_uk"),
    "m.c_kapuskasing": ("Kapuskasing", "m.n_canada"),
    "m.c_cincinnati": ("Cincinnati", "m.n_usa"),
    "m.c_chicago": ("Chicago", "m.n_usa"),
    "m.c_spangler": ("Spangler", "m.n_usa"),
    "m.c_frankfurt": ("Frankfurt", "m.n_germany"),
    "m.c_los_angeles": ("Los Angeles", "m.n_usa"),
    "m.c_new_york": ("New York City", "m.n_usa"),
    "m.c_reading": ("Reading", "m.n_uk"),
    "m.c_orange_nj": ("Orange", "m.n_usa"),
    "m.c_concord": ("Concord", "m.n_usa"),
}
COUNTRIES = {
    "m.n_uk": "United Kingdom",
    "m.n_canada": "Canada",
    "m.n_usa": "United States of America",
    "m.n_germany": "Germany",
}
GENRES = {"m.g_scifi": "Science Fiction", "m.g_drama": "Drama", "m.g_thriller": "Thriller"}
FILM_GENRE = {
    "m.f_inception": "m.g_scifi",
    "m.f_titanic": "m.g_drama",
    "m.f_jaws": "m.g_thriller",
    "m.f_gump": "m.g_drama",
    "m.f_potter": "m.g_scifi",
}

DIRECTED = "film.film.directed_by"
MUSIC = "film.film.music"
STARRING = "film.film.starring"
GENRE = "film.film.genre"
BORN = "people.person.place_of_birth"
IN = "location.location.containedby"


def label(e):
    if e in PEOPLE:
        return PEOPLE[e][0]
    if e in CITIES:
        return CITIES[e][0]
    if e in COUNTRIES:
        return COUNTRIES[e]
    if e in GENRES:
        return GENRES[e]
    return next(t for f, t, *_ in FILMS if f == e)


def triples():
    out = []
    for f, _, d, c, a in FILMS:
        out += [(f, DIRECTED, d), (f, MUSIC, c), (f, STARRING, a), (f, GENRE, FILM_GENRE[f])]
    for p, (_, city) in PEOPLE.items():
        out.append((p, BORN, city))
    for c, (_, n) in CITIES.items():
        out.append((c, IN, n))
    return sorted(set(out))


def chain(film, hops):
    """(subquestion, topic, answer) per hop along film -> director -> city -> country."""
    _, title, director, _, _ = next(x for x in FILMS if x[0] == film)
    city = PEOPLE[director][1]
    country = CITIES[city][1]
    steps = [
        (f"Who directed {title}?", film, director),
        (f"Where was {label(director)} born?", director, city),
        (f"Which country is {label(city)} located in?", city, country),
    ]
    return steps[:hops]


def questions():
    qs = []
    for f, title, _, composer, _ in FILMS:
        key = f.split("_", 1)[1]
        qs.append((f"h1_dir_{key}", f"Who directed {title}?", f, chain(f, 1)))
        qs.append((f"h1_music_{key}", f"Who composed the music for {title}?", f,
                   [(f"Who composed the music for {title}?", f, composer)]))
        qs.append((f"h2_{key}", f"Where was the director of {title} born?", f, chain(f, 2)))
        qs.append((f"h3_{key}", f"In which country was the director of {title} born?", f, chain(f, 3)))
    return qs


def transcript(question, steps):
    iqg = [{"expect": question if i == 0 else label(steps[i - 1][2]),
            "reply": f"SUBQUESTION: {sq}"} for i, (sq, _, _) in enumerate(steps)]
    ae = []
    for i, (_, _, ans) in enumerate(steps):
        last = i == len(steps) - 1
        ae.append({"expect": label(ans),
                   "reply": f"ANSWER: {label(ans)}\nSUFFICIENT: {'yes' if last else 'no'}\nSOURCE: kg"})
    ae.append({"expect": label(steps[-1][2]), "reply": f"FINAL: {label(steps[-1][2])}"})
    return {"iqg": iqg, "ae": ae}


def main():
    os.makedirs("transcripts", exist_ok=True)
    with open("kg.tsv", "w") as f:
        for s, r, o in triples():
            f.write(f"{s}\t{r}\t{o}\n")
    ents = sorted({e for s, _, o in triples() for e in (s, o)})
    with open("labels.tsv", "w") as f:
        for e in ents:
            f.write(f"{e}\t{label(e)}\n")

    records, pairs = [], []
    for qid, q, topic, steps in questions():
        answer = label(steps[-1][2])
        records.append({"id": qid, "question": q, "topic_entity": topic, "answers": [answer]})
        with open(f"transcripts/{qid}.json", "w") as f:
            json.dump(transcript(q, steps), f, indent=2, ensure_ascii=False)
            f.write("\n")
        for sq, t, a in steps:
            pairs.append({"question": sq, "topic": t, "answer": a})

    # Topic absent from the graph: answered from internal knowledge.
    qid = "h1_missing_topic"
    records.append({"id": qid, "question": "Which film is the soundtrack 'Feather Theme' from?",
                    "topic_entity": "m.s_feather_theme", "answers": ["Forrest Gump"]})
    with open(f"transcripts/{qid}.json", "w") as f:
        json.dump({
            "iqg": [{"expect": "Feather Theme", "reply": "SUBQUESTION: Which film is the soundtrack 'Feather Theme' from?"}],
            "ae": [
                {"expect": "returned no evidence", "reply": "ANSWER: Forrest Gump\nSUFFICIENT: yes\nSOURCE: internal"},
                {"reply": "FINAL: Forrest Gump"},
            ],
        }, f, indent=2)
        f.write("\n")

    with open("dataset.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
    seen = set()
    with open("pairs.jsonl", "w") as f:
        for p in pairs:
            k = json.dumps(p, sort_keys=True)
            if k not in seen:
                seen.add(k)
                f.write(json.dumps(p, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
