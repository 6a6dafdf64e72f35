#include "same/text.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace same {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<uint32_t> utf8_decode(const std::string& s) {
  std::vector<uint32_t> out;
  size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = s[i];
    uint32_t cp = 0;
    int extra = 0;
    if (c < 0x80) {
      cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      cp = c & 0x1F;
      extra = 1;
    } else if ((c & 0xF0) == 0xE0) {
      cp = c & 0x0F;
      extra = 2;
    } else if ((c & 0xF8) == 0xF0) {
      cp = c & 0x07;
      extra = 3;
    } else {
      throw std::domain_error("invalid UTF-8 byte");
    }
    if (i + extra >= s.size()) throw std::domain_error("truncated UTF-8");
    for (int k = 0; k < extra; ++k) {
      const unsigned char cc = s[i + 1 + k];
      if ((cc & 0xC0) != 0x80) throw std::domain_error("invalid UTF-8 cont");
      cp = (cp << 6) | (cc & 0x3F);
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

std::string utf8_encode(const std::vector<uint32_t>& cps) {
  std::string out;
  for (uint32_t cp : cps) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

std::string to_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
  return out;
}

}  // namespace

std::vector<std::string> split_words(const std::string& raw_text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : raw_text) {
    if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(c));
    } else if (!cur.empty()) {
      words.push_back(to_lower(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(to_lower(cur));
  return words;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& words) {
  Vocabulary v;
  v.id_to_word_ = {kPad, kSep};
  for (const std::string& w : words) {
    const std::string lw = to_lower(w);
    if (lw.empty() || v.word_to_id_.count(lw)) continue;
    v.word_to_id_[lw] = static_cast<int>(v.id_to_word_.size());
    v.id_to_word_.push_back(lw);
  }
  std::string blob;
  for (const std::string& w : v.id_to_word_) {
    blob += w;
    blob += '\n';
  }
  v.fingerprint_ = fnv1a(blob);
  return v;
}

std::optional<int> Vocabulary::lookup(const std::string& lower_word) const {
  auto it = word_to_id_.find(lower_word);
  if (it == word_to_id_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::token_id(const std::string& lower_word,
                         int n_hash_buckets) const {
  if (auto id = lookup(lower_word)) return *id;
  return size() + static_cast<int>(fnv1a(lower_word) % n_hash_buckets);
}

std::string Sentence::joined() const {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

Sentence tokenize(const Vocabulary& vocab, const std::string& raw_text,
                  int n_hash_buckets) {
  if (raw_text.empty()) throw std::domain_error("tokenize: empty text");
  Sentence s;
  s.raw = raw_text;
  s.words = split_words(raw_text);
  if (s.words.empty())
    throw std::domain_error("tokenize: no words after splitting");
  s.token_ids.reserve(s.words.size());
  for (const std::string& w : s.words)
    s.token_ids.push_back(vocab.token_id(w, n_hash_buckets));
  return s;
}

HomoglyphTable HomoglyphTable::builtin() {
  HomoglyphTable t;
  t.map_ = {
      {'a', 0x0430}, {'c', 0x0441}, {'e', 0x0435}, {'o', 0x043E},
      {'p', 0x0440}, {'x', 0x0445}, {'i', 0x0456}, {'l', '1'},
      {'O', '0'},    {'s', 0x0455}, {'d', 0x0501}, {'y', 0x0443},
  };
  return t;
}

HomoglyphTable HomoglyphTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open homoglyph table: " + path);
  HomoglyphTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string from, to;
    if (!(ls >> from >> to)) continue;
    const auto f = utf8_decode(from), g = utf8_decode(to);
    if (f.size() != 1 || g.size() != 1 || f[0] == g[0])
      throw std::runtime_error("bad homoglyph mapping line: " + line);
    t.map_[f[0]] = g[0];
  }
  if (t.map_.empty()) throw std::runtime_error("empty homoglyph table");
  return t;
}

std::optional<uint32_t> HomoglyphTable::replacement(uint32_t cp) const {
  auto it = map_.find(cp);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

bool HomoglyphTable::mappable(const std::string& word) const {
  for (uint32_t cp : utf8_decode(word))
    if (map_.count(cp)) return true;
  return false;
}

std::vector<std::string> char_mutations(const std::string& word,
                                        const HomoglyphTable& table, Rng& rng,
                                        int count_per_kind) {
  const std::vector<uint32_t> cps = utf8_decode(word);
  const int n = static_cast<int>(cps.size());
  if (n < 1) throw std::domain_error("char_mutations: empty word");
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto emit = [&](std::vector<uint32_t> m) {
    std::string s = utf8_encode(m);
    if (s != word && seen.insert(s).second) out.push_back(std::move(s));
  };
  if (n >= 2) {  // swap
    for (int k = 0; k < count_per_kind; ++k) {
      const int p = rng.uniform_int(n - 1);
      std::vector<uint32_t> m = cps;
      std::swap(m[p], m[p + 1]);
      emit(std::move(m));
    }
  }
  for (int k = 0; k < count_per_kind; ++k) {  // insertion, printable non-space
    const int p = rng.uniform_int(n + 1);
    const uint32_t c = 33 + rng.uniform_int(94);
    std::vector<uint32_t> m = cps;
    m.insert(m.begin() + p, c);
    emit(std::move(m));
  }
  if (n >= 2) {  // deletion
    for (int k = 0; k < count_per_kind; ++k) {
      const int p = rng.uniform_int(n);
      std::vector<uint32_t> m = cps;
      m.erase(m.begin() + p);
      emit(std::move(m));
    }
  }
  std::vector<int> mappable_pos;
  for (int i = 0; i < n; ++i)
    if (table.replacement(cps[i])) mappable_pos.push_back(i);
  if (!mappable_pos.empty()) {  // homoglyph
    for (int k = 0; k < count_per_kind; ++k) {
      const int p = mappable_pos[rng.uniform_int(
          static_cast<int>(mappable_pos.size()))];
      std::vector<uint32_t> m = cps;
      m[p] = *table.replacement(cps[p]);
      emit(std::move(m));
    }
  }
  return out;
}

int levenshtein(const std::string& a, const std::string& b) {
  // Optimal-string-alignment distance on codepoints: insert, delete,
  // substitute, and adjacent transposition each count as one edit, so every
  // character mutation kind sits at distance exactly one.
  const auto x = utf8_decode(a), y = utf8_decode(b);
  std::vector<int> prev2(y.size() + 1), prev(y.size() + 1), cur(y.size() + 1);
  for (size_t j = 0; j <= y.size(); ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= x.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= y.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1)});
      if (i > 1 && j > 1 && x[i - 1] == y[j - 2] && x[i - 2] == y[j - 1])
        cur[j] = std::min(cur[j], prev2[j - 2] + 1);
    }
    std::swap(prev2, prev);
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

DatasetLoadResult load_dataset(const Vocabulary& vocab, const std::string& path,
                               int n_hash_buckets) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  DatasetLoadResult res;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Sentence s = tokenize(vocab, j.at("text").get<std::string>(),
                            n_hash_buckets);
      s.label = j.at("label").get<int>();
      res.sentences.push_back(std::move(s));
    } catch (const std::exception& e) {
      res.warnings.push_back("line " + std::to_string(lineno) + ": " +
                             e.what());
    }
  }
  return res;
}

void save_dataset(const std::vector<Sentence>& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const Sentence& s : data) {
    nlohmann::json j{{"text", s.raw}, {"label", s.label}};
    out << j.dump() << "\n";
  }
}

SynthTask synth_task_from_string(const std::string& s) {
  if (s == "keyword-sentiment") return SynthTask::kKeywordSentiment;
  if (s == "parity-of-markers") return SynthTask::kParityOfMarkers;
  if (s == "templated-nli") return SynthTask::kTemplatedNli;
  throw std::invalid_argument("unknown synth task: " + s);
}

namespace {

const std::vector<std::string> kStrongPos = {
    "excellent", "wonderful", "superb",   "delightful", "brilliant",
    "fantastic", "marvelous", "terrific", "magnificent", "splendid"};
const std::vector<std::string> kStrongNeg = {
    "terrible", "awful",  "horrible", "dreadful", "abysmal",
    "atrocious", "dismal", "lousy",   "appalling", "wretched"};
const std::vector<std::string> kWeakPos = {"decent", "pleasant", "fine",
                                           "solid",  "likable",  "tidy"};
const std::vector<std::string> kWeakNeg = {"dull",  "bland",  "shaky",
                                           "messy", "clumsy", "stale"};
// Large neutral pool: a random word substitution should rarely hit a
// polarity keyword by chance.
const std::vector<std::string> kNeutral = {
    "the",     "movie",   "film",    "plot",    "actor",   "scene",
    "story",   "camera",  "script",  "crowd",   "ticket",  "sound",
    "studio",  "frame",   "season",  "channel", "evening", "morning",
    "weekend", "review",  "screen",  "banana",  "table",   "window",
    "river",   "garden",  "street",  "paper",   "engine",  "bottle",
    "market",  "yellow",  "silver",  "wooden",  "quiet",   "early",
    "late",    "again",   "almost",  "mostly",  "rather",  "quite",
    "valley",  "meadow",  "harbor",  "tunnel",  "bridge",  "castle",
    "village", "station", "library", "kitchen", "corner",  "pocket",
    "jacket",  "ladder",  "mirror",  "carpet",  "curtain", "pillow",
    "basket",  "candle",  "pencil",  "folder",  "hammer",  "shovel",
    "anchor",  "sailor",  "farmer",  "barber",  "tailor",  "waiter",
    "singer",  "walker",  "runner",  "reader",  "writer",  "driver",
    "monday",  "tuesday", "august",  "october", "january", "summer",
    "winter",  "autumn",  "spring",  "north",   "south",   "east",
    "west",    "middle",  "nearby",  "around",  "beyond",  "within",
    "under",   "above",   "across",  "along",   "behind",  "between",
    "cotton",  "copper",  "marble",  "gravel",  "timber",  "velvet",
    "orange",  "purple",  "maroon",  "indigo",  "crimson", "emerald",
    "basin",   "bramble", "binder",  "bucket",  "burrow",  "cabin",
    "canal",   "canvas",  "carton",  "cellar",  "chapel",  "chimney",
    "closet",  "cobble",  "column",  "crater",  "cradle",  "dairy",
    "deck",    "depot",   "ditch",   "dock",    "drawer",  "fence",
    "ferry",   "flask",   "galley",  "garage",  "gazebo",  "glacier",
    "grove",   "gutter",  "hallway", "hangar",  "hedge",   "hinge",
    "inlet",   "island",  "jetty",   "kennel",  "kiosk",   "lagoon",
    "lantern", "ledge",   "lobby",   "locker",  "lodge",   "loft",
    "manor",   "mantel",  "marsh",   "mill",    "moat",    "motel",
    "nook",    "oasis",   "orchard", "outpost", "paddock", "pantry",
    "parlor",  "patio",   "pier",    "plank",   "plaza",   "pond",
    "porch",   "portal",  "quarry",  "rafter",  "ranch",   "ravine",
    "reef",    "ridge",   "runway",  "saddle",  "shed",    "shelf",
    "shore",   "silo",    "slope",   "stable",  "stairs",  "stall",
    "steeple", "stream",  "summit",  "swamp",   "tavern",  "terrace",
    "thicket", "tower",   "trail",   "trench",  "turret",  "vault",
    "veranda", "vineyard","wagon",   "wharf",   "windmill","yard",
    "attic",   "awning",  "balcony", "barge",   "barn",    "bay",
    "bluff",   "bog",     "booth",   "boulder", "brook",   "bunker",
    "buoy",    "cape",    "cavern",  "cliff",   "cove",    "creek",
    "delta",   "dune",    "fjord",   "ford",    "fountain","gate",
    "geyser",  "gorge",   "gulf",    "hamlet",  "hill",    "hollow",
    "knoll",   "lake",    "lane",    "ledger",  "mesa",    "mound",
    "pass",    "path",    "peak",    "plain",   "plateau", "pool",
    "port",    "prairie", "quay",    "rapids",  "ravelin", "road",
    "rock",    "sand",    "sea",     "shoal",   "spring",  "strait",
    "tide",    "tundra",  "vale",    "valve",   "wave",    "well"};
const std::vector<std::string> kNouns = {"dog",  "cat",  "boat", "house",
                                         "tree", "bird", "car",  "lamp"};
const std::vector<std::string> kAdjs = {"big",   "small", "red",  "blue",
                                        "old",   "new",   "fast", "slow"};

std::string pick(const std::vector<std::string>& v, Rng& rng) {
  return v[rng.uniform_int(static_cast<int>(v.size()))];
}

RawDataset gen_keyword_sentiment(int n, uint64_t seed) {
  RawDataset ds;
  ds.n_classes = 2;
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, i));
    const int label = rng.uniform_int(2);  // 1 = positive
    const auto& strong = label ? kStrongPos : kStrongNeg;
    const int len = 8 + rng.uniform_int(7);
    std::vector<std::string> words;
    // Every sample carries three polarity-bearing words, all agreeing with
    // the label, so the label survives any single-word substitution; tiers
    // only vary how emphatic the evidence is. No contradictory evidence is
    // ever generated, keeping the clean task fully learnable.
    const auto& weak_same = label ? kWeakPos : kWeakNeg;
    const double tier = rng.uniform();
    if (tier < 0.40) {  // easy: three strong keywords
      words.push_back(pick(strong, rng));
      words.push_back(pick(strong, rng));
      words.push_back(pick(strong, rng));
    } else if (tier < 0.75) {  // medium: two strong plus one weak
      words.push_back(pick(strong, rng));
      words.push_back(pick(strong, rng));
      words.push_back(pick(weak_same, rng));
    } else {  // hard: one strong plus two weak
      words.push_back(pick(strong, rng));
      words.push_back(pick(weak_same, rng));
      words.push_back(pick(weak_same, rng));
    }
    while (static_cast<int>(words.size()) < len)
      words.push_back(pick(kNeutral, rng));
    for (int k = static_cast<int>(words.size()) - 1; k > 0; --k)
      std::swap(words[k], words[rng.uniform_int(k + 1)]);
    std::string text;
    for (size_t k = 0; k < words.size(); ++k) {
      if (k) text += ' ';
      text += words[k];
    }
    ds.texts.push_back(text);
    ds.labels.push_back(label);
  }
  return ds;
}

RawDataset gen_parity(int n, uint64_t seed) {
  RawDataset ds;
  ds.n_classes = 2;
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, i));
    const int markers = rng.uniform_int(4);
    const int len = 8 + rng.uniform_int(7);
    std::vector<std::string> words(markers, "beacon");
    while (static_cast<int>(words.size()) < len)
      words.push_back(pick(kNeutral, rng));
    for (int k = static_cast<int>(words.size()) - 1; k > 0; --k)
      std::swap(words[k], words[rng.uniform_int(k + 1)]);
    std::string text;
    for (size_t k = 0; k < words.size(); ++k) {
      if (k) text += ' ';
      text += words[k];
    }
    ds.texts.push_back(text);
    ds.labels.push_back(markers % 2);
  }
  return ds;
}

RawDataset gen_nli(int n, uint64_t seed) {
  RawDataset ds;
  ds.n_classes = 3;
  for (int i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, i));
    const int label = rng.uniform_int(3);  // 0 entail, 1 contradict, 2 neutral
    const std::string noun = pick(kNouns, rng);
    const int adj_idx = rng.uniform_int(static_cast<int>(kAdjs.size()) / 2) * 2;
    const std::string adj = kAdjs[adj_idx];
    std::string hyp_adj;
    if (label == 0) {
      hyp_adj = adj;
    } else if (label == 1) {
      hyp_adj = kAdjs[adj_idx + 1];  // paired antonym
    } else {
      hyp_adj = pick(kNeutral, rng);
    }
    ds.texts.push_back("the " + noun + " is " + adj + " sep the " + noun +
                       " is " + hyp_adj);
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace

RawDataset synth_task(SynthTask kind, int n_samples, uint64_t seed) {
  switch (kind) {
    case SynthTask::kKeywordSentiment:
      return gen_keyword_sentiment(n_samples, seed);
    case SynthTask::kParityOfMarkers:
      return gen_parity(n_samples, seed);
    case SynthTask::kTemplatedNli:
      return gen_nli(n_samples, seed);
  }
  throw std::logic_error("unreachable");
}

Vocabulary build_vocab(const std::vector<std::string>& texts) {
  std::set<std::string> uniq;
  for (const std::string& t : texts)
    for (const std::string& w : split_words(t)) uniq.insert(w);
  return Vocabulary::build(std::vector<std::string>(uniq.begin(), uniq.end()));
}

}  // namespace same
