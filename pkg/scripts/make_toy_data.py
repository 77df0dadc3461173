"""Regenerate the bundled toy corpus, tasks, config and vector file.

Vectors come from the hashing provider, so the file-mode toy run needs no
network. Summary vectors are included by replaying the stub-client build.
"""

import json
from pathlib import Path

from latticerag.config import validate
from latticerag.corpus import chunk_corpus, CorpusDocument
from latticerag.embeddings import HashingProvider, write_vector_file
from latticerag.index import build_in_memory
from latticerag.query_pipeline import StubClient

OUT = Path(__file__).resolve().parents[1] / "src" / "latticerag" / "data" / "toy"
DIM = 128

HARBOR = [
    "Veldmoor harbor shelters forty fishing boats behind a stone breakwater built in 1822. The harbor master records every landing of cod and herring in a ledger kept at the customs house.",
    "The Veldmoor lighthouse stands on Gull Point and its lamp is visible for eighteen nautical miles. Keeper Ansel Rudd trimmed the wicks for thirty years before the lamp was electrified.",
    "Herring arrive in the Veldmoor fjord each October. Fishing crews set drift nets at dusk and return to the harbor at dawn to sell the catch at the morning auction.",
    "The harbor auction opens at six in the morning. Buyers from inland towns bid on crates of cod, herring and mackerel while the harbor master weighs each lot.",
    "A storm in 1907 breached the breakwater and sank eleven fishing boats. The harbor was rebuilt with granite blocks quarried on the far side of the fjord.",
    "Net menders work in the long shed beside the harbor. They repair drift nets with hemp twine and tar the floats before the herring season begins.",
    "The fishing cooperative of Veldmoor was founded in 1894 to share the cost of ice and salt. Members split the auction proceeds according to the catch each boat lands.",
    "Salt cod from Veldmoor is dried on wooden racks along the harbor wall for six weeks. Merchants ship the dried fish south in barrels.",
    "The lighthouse keeper logs ship sightings, fog hours and lamp oil consumption. Keeper Ansel Rudd recorded 212 foggy nights in the winter of 1911.",
    "Pilots guide cargo ships through the narrow channel into Veldmoor harbor. The pilot boat waits beneath the lighthouse until a ship signals with flags.",
]
OBSERVATORY = [
    "The Kessel Observatory sits on Mount Kessel at 1,400 meters above the sea. Its main telescope is a refractor with a lens 60 centimeters across.",
    "Astronomer Mirela Ost catalogued 3,100 variable stars from the Kessel Observatory. Her catalogue lists the period and brightness range of each star.",
    "Clear nights on Mount Kessel average 140 per year. Cloud and wind from the fjord close the telescope dome on most winter evenings.",
    "The observatory dome rotates on iron wheels and is turned by a hand crank. Two assistants can rotate the full dome in four minutes.",
    "Mirela Ost measured the orbit of a double star over nineteen years. She found that its two stars circle each other every 61 years.",
    "Photographic plates from the Kessel Observatory are stored in a cold vault. The archive holds 48,000 glass plates exposed between 1890 and 1960.",
    "The Kessel refractor was ground by lens makers in the capital in 1888. Hauling the lens up Mount Kessel took a mule train nine days.",
    "Each night the observer records seeing conditions, sky transparency and the plate exposure times in the observing log.",
    "A comet discovered from Mount Kessel in 1934 carries the name Ost-Kessel. It returns to the inner solar system every 76 years.",
    "Students at the observatory learn to reduce star positions with logarithm tables. The summer school admits twelve students each year.",
]
GLASS = [
    "The Veldmoor glassworks melts sand, soda ash and lime in a furnace heated to 1,450 degrees. Glassblowers shape bottles, lamp chimneys and window panes.",
    "Glassblower Tomas Varga made the lamp lens for the Veldmoor lighthouse in 1899. The lens has eight concentric prism rings.",
    "The glass guild sets prices for window panes and bottles each spring. Guild members must train an apprentice for five years.",
    "Green bottle glass gets its color from iron in the local sand. Clear glass requires manganese to cancel the green tint.",
    "The glassworks furnace burns beech charcoal. Charcoal burners in the Oslen valley supply ninety sacks a week.",
    "Annealing ovens cool finished glass slowly over two days. Glass cooled too quickly cracks when it is cut.",
    "Tomas Varga also ground the small guide telescope lenses for the Kessel Observatory. Mirela Ost praised their clarity in her annual report.",
    "The glass guild hall keeps a pattern book with 600 bottle designs. Each design is stamped with the mark of the workshop that made it.",
    "Broken glass, called cullet, is collected from taverns and melted again. Cullet lowers the furnace temperature needed for a batch.",
    "Apprentices at the glassworks start by gathering molten glass on the blowpipe. Only after three years do they blow lamp chimneys alone.",
]
RAILWAY = [
    "The Oslen Valley Railway opened in 1881 and links Veldmoor harbor to the inland market town of Brenn. The line is 64 kilometers long.",
    "Steam locomotives on the Oslen line climb a grade of two percent through the Kessel pass. A second engine pushes heavy freight trains up the grade.",
    "The railway carries crates of salt cod from Veldmoor harbor to Brenn every morning. Freight wagons return with grain and timber.",
    "The Oslen line crosses the river on a stone viaduct with fourteen arches. Engineers finished the viaduct in 1880 after two floods.",
    "Crates of bottles from the Veldmoor glassworks travel by railway to Brenn in wagons padded with straw.",
    "The station at Kessel pass serves the observatory. Astronomers ride the morning train and climb the last kilometer on foot.",
    "Signal boxes on the Oslen line use a token system. A driver may enter a single-track section only while holding the token.",
    "The railway timetable of 1910 lists four passenger trains a day each way. The fastest train reached Brenn in two hours.",
    "Winter snow blocks the Kessel pass several times a year. A snow plough mounted on a locomotive clears the line.",
    "The railway workshop in Brenn repairs locomotives and wagons. It employs sixty fitters, boilermakers and carpenters.",
]
GARDEN = [
    "The Brenn botanical garden grows 2,000 species of plants on four hectares. Its glasshouse shelters tropical ferns and orchids.",
    "The apothecary of Brenn dries chamomile, yarrow and valerian from the botanical garden. Valerian root is sold as a remedy for sleeplessness.",
    "Gardener Ilse Brandt planted the garden's herb beds in 1872. She arranged the medicinal plants by the ailment they treat.",
    "The glasshouse of the Brenn botanical garden was built with panes from the Veldmoor glassworks. It is heated by a coal boiler in winter.",
    "Seeds from the botanical garden are exchanged with gardens abroad each autumn. The seed list offers about 900 species.",
    "The apothecary keeps remedies in brown glass bottles to protect them from light. The bottles are labeled with the plant name and dose.",
    "Ilse Brandt wrote a herbal describing 340 medicinal plants. Her herbal gives the harvest season and preparation of each plant.",
    "Chamomile flowers are picked in June and dried in the shade. The apothecary steeps them as a tea for stomach complaints.",
    "The botanical garden opens to visitors on Sundays. Guides explain the herb beds, the rock garden and the pond of water lilies.",
    "Beekeepers keep twelve hives at the edge of the botanical garden. The honey is sold by the apothecary as a remedy for coughs.",
]

TASKS = [
    ("harbor-lamp", "How far is the Veldmoor lighthouse lamp visible?", "eighteen nautical miles", None),
    ("keeper", "Who was the keeper of the Veldmoor lighthouse?", "Ansel Rudd", None),
    ("auction", "When does the harbor auction open?", "six in the morning", None),
    ("telescope", "How wide is the lens of the Kessel refractor?", "60 centimeters", None),
    ("catalogue", "How many variable stars did Mirela Ost catalogue?", "3,100 variable stars", None),
    ("comet", "How often does comet Ost-Kessel return?", "every 76 years", None),
    ("lens-maker", "Who made the lamp lens for the lighthouse?", "Tomas Varga", None),
    ("green-glass", "What gives green bottle glass its color?", "iron in the local sand", None),
    ("railway-length", "How long is the Oslen Valley Railway?", "64 kilometers", "railway-00"),
    ("viaduct", "How many arches does the Oslen viaduct have?", "fourteen arches", None),
    ("glasshouse", "Where did the panes for the botanical garden glasshouse come from?", "Veldmoor glassworks", None),
    ("valerian", "What is valerian root sold as a remedy for?", "sleeplessness", None),
    ("bridge-cod", "Which railway carries salt cod from the harbor to Brenn?", "Oslen Valley Railway", None),
    ("bridge-guide", "Who ground the guide telescope lenses for the observatory?", "Tomas Varga", None),
    ("herbal", "How many medicinal plants does the herbal of Ilse Brandt describe?", "340 medicinal plants", None),
]
DEMO_QUERIES = ["Who made the lamp lens for the lighthouse?", "how does glass reach Brenn"]

CONFIG = {
    "rq": {"level_sizes": [6, 3, 2], "seed": 0},
    "graph": {"min_meet_mass": 0.5, "theta": 2, "window": 4},
    "summaries": {"budget": 4, "representatives": 3},
    "provider": {"mode": "file", "vector_file": "vectors.tsv", "dimension": DIM},
    "client": {"mode": "stub"},
}


class Recorder(HashingProvider):
    def __init__(self, dimension):
        super().__init__(dimension)
        self.seen = {}

    def _embed(self, request):
        vec = super()._embed(request)
        self.seen[request.lookup_key] = vec
        return vec


def documents():
    topics = {"harbor": HARBOR, "observatory": OBSERVATORY, "glass": GLASS, "railway": RAILWAY, "garden": GARDEN}
    return [CorpusDocument(f"{name}-{i:02d}", name, text)
            for name, texts in topics.items() for i, text in enumerate(texts)]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    docs = documents()
    with open(OUT / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({"doc_id": d.doc_id, "text": d.text}) + "\n")
    with open(OUT / "tasks.jsonl", "w", encoding="utf-8") as fh:
        for tid, q, a, doc in TASKS:
            rec = {"id": tid, "query": q, "answer": a}
            if doc:
                rec["doc_id"] = doc
            fh.write(json.dumps(rec) + "\n")
    (OUT / "config.json").write_text(json.dumps(CONFIG, indent=2) + "\n", encoding="utf-8")

    from latticerag.config import config_from_dict
    cfg = validate(config_from_dict({**CONFIG, "provider": {"mode": "hashing", "dimension": DIM}}))
    rec = Recorder(DIM)
    chunks = chunk_corpus(docs, cfg.chunking.target_tokens, cfg.chunking.overlap_tokens)
    build_in_memory(chunks, cfg, rec, StubClient())
    for q in [t[1] for t in TASKS] + DEMO_QUERIES:
        rec.embed_query(q)
    write_vector_file(OUT / "vectors.tsv", dict(sorted(rec.seen.items())))
    print(f"{len(chunks)} chunks, {len(rec.seen)} vectors -> {OUT}")


if __name__ == "__main__":
    main()
