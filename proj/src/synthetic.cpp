#include "prl/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace prl {

namespace {

using Rng = std::mt19937_64;

constexpr std::array<std::string_view, 18> kOnsets{
    "b", "c", "d", "f", "g", "h", "j", "k", "l",
    "m", "n", "p", "r", "s", "t", "v", "w", "z"};
constexpr std::array<std::string_view, 8> kVowels{"a",  "e",  "i",  "o",
                                                  "u",  "ai", "ea", "ie"};
constexpr std::array<std::string_view, 10> kCodas{"", "",  "n", "r",  "s",
                                                  "l", "th", "t", "rd", "ck"};

std::vector<std::string> make_vocab(std::size_t n, int min_syl, int max_syl,
                                    Rng &rng) {
  std::uniform_int_distribution<int> syl(min_syl, max_syl);
  std::uniform_int_distribution<std::size_t> on(0, kOnsets.size() - 1);
  std::uniform_int_distribution<std::size_t> vo(0, kVowels.size() - 1);
  std::uniform_int_distribution<std::size_t> co(0, kCodas.size() - 1);
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    int k = syl(rng);
    for (int i = 0; i < k; ++i) {
      w += kOnsets[on(rng)];
      w += kVowels[vo(rng)];
    }
    w += kCodas[co(rng)];
    if (seen.insert(w).second)
      out.push_back(w);
  }
  return out;
}

class ZipfVocab {
public:
  ZipfVocab(std::vector<std::string> words, double exponent)
      : words_(std::move(words)) {
    std::vector<double> w(words_.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = 1.0 / std::pow(static_cast<double>(i + 1), exponent);
    dist_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }
  const std::string &draw(Rng &rng) { return words_[dist_(rng)]; }

private:
  std::vector<std::string> words_;
  std::discrete_distribution<std::size_t> dist_;
};

struct Person {
  std::string first, middle, surname, occupation, number, street, type, party;
  bool female = false;
};

std::string typo(const std::string &s, Rng &rng) {
  static constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";
  static constexpr std::string_view kDigits = "0123456789";
  const bool numeric =
      std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  const auto alphabet = numeric ? kDigits : kLetters;
  std::uniform_int_distribution<std::size_t> letter(0, alphabet.size() - 1);
  std::uniform_int_distribution<std::size_t> pos(0, s.size() - 1);
  std::string out = s;
  int kind = std::uniform_int_distribution<int>(0, 3)(rng);
  if (out.size() < 2)
    kind = 0;
  switch (kind) {
  case 0:
    out[pos(rng)] = alphabet[letter(rng)];
    break;
  case 1:
    out.erase(pos(rng), 1);
    break;
  case 2:
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(pos(rng)),
               alphabet[letter(rng)]);
    break;
  default: {
    std::size_t i = std::uniform_int_distribution<std::size_t>(0, out.size() - 2)(rng);
    std::swap(out[i], out[i + 1]);
  }
  }
  return out;
}

} // namespace

SyntheticConfig SyntheticConfig::moderate(std::size_t n_a, std::size_t n_b,
                                          std::size_t overlap) {
  SyntheticConfig c;
  c.n_a = n_a;
  c.n_b = n_b;
  c.overlap = overlap;
  c.corruption = {
      {"first_name", {0.06, 0.01, 0.02}},
      {"middle_name", {0.05, 0.10, 0.02}},
      {"surname", {0.06, 0.01, 0.01}},
      {"occupation", {0.05, 0.08, 0.05}},
      {"street_number", {0.05, 0.05, 0.0}},
      {"street_name", {0.05, 0.05, 0.0}},
      {"street_type", {0.0, 0.05, 0.03}},
      {"female", {0.0, 0.0, 0.01}},
  };
  c.mover_rate = 0.15;
  c.switch_rate = 0.20;
  return c;
}

SyntheticFiles generate_synthetic_files(const SyntheticConfig &config,
                                        std::uint64_t seed) {
  if (config.overlap > config.n_a || config.overlap > config.n_b)
    throw std::invalid_argument("overlap " + std::to_string(config.overlap) +
                                " exceeds file sizes (" +
                                std::to_string(config.n_a) + ", " +
                                std::to_string(config.n_b) + ")");
  Rng rng(seed);
  ZipfVocab firsts(make_vocab(config.first_name_vocab, 1, 3, rng), 1.0);
  ZipfVocab surnames(make_vocab(config.surname_vocab, 2, 3, rng), 0.7);
  ZipfVocab occupations(make_vocab(config.occupation_vocab, 2, 4, rng), 1.0);
  ZipfVocab streets(make_vocab(config.street_name_vocab, 1, 3, rng), 0.8);
  const auto types_map = NormalizeOptions::default_street_types();
  std::set<std::string> type_set;
  for (const auto &[k, v] : types_map)
    type_set.insert(v);
  std::vector<std::string> types(type_set.begin(), type_set.end());
  std::uniform_int_distribution<std::size_t> type_pick(0, types.size() - 1);
  std::uniform_int_distribution<int> number_pick(1, 9999);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto fresh_address = [&](Person &p) {
    p.number = std::to_string(number_pick(rng));
    p.street = streets.draw(rng);
    p.type = types[type_pick(rng)];
  };
  auto fresh_person = [&]() {
    Person p;
    p.female = unif(rng) < config.female_rate;
    p.first = firsts.draw(rng);
    double mid = unif(rng);
    if (mid < 0.5)
      p.middle = std::string(1, firsts.draw(rng).front());
    else if (mid < 0.8)
      p.middle = firsts.draw(rng);
    p.surname = surnames.draw(rng);
    if (!(p.female && unif(rng) < 0.4))
      p.occupation = occupations.draw(rng);
    fresh_address(p);
    double party = unif(rng);
    p.party = party < 0.3 ? "dem" : party < 0.9 ? "rep" : "other";
    return p;
  };

  const FieldSchema schema = FieldSchema::canonical();
  auto to_record = [&](const Person &p) {
    Record r;
    r.values.resize(schema.fields.size());
    auto put = [&](FieldRole role, const std::string &v) {
      if (!v.empty())
        r.values[*schema.index_of(role)] = v;
    };
    put(FieldRole::first_name, p.first);
    put(FieldRole::middle_name, p.middle);
    put(FieldRole::surname, p.surname);
    put(FieldRole::female, p.female ? "1" : "0");
    put(FieldRole::occupation, p.occupation);
    put(FieldRole::street_number, p.number);
    put(FieldRole::street_name, p.street);
    put(FieldRole::street_type, p.type);
    put(FieldRole::party, p.party);
    return r;
  };
  auto corrupt = [&](Record &r) {
    for (std::size_t f = 0; f < schema.fields.size(); ++f) {
      auto it = config.corruption.find(schema.fields[f].name);
      if (it == config.corruption.end() || !r.values[f])
        continue;
      const FieldCorruption &c = it->second;
      const FieldRole role = schema.fields[f].role;
      if (unif(rng) < c.missing) {
        r.values[f].reset();
        continue;
      }
      if (unif(rng) < c.replace) {
        switch (role) {
        case FieldRole::first_name: r.values[f] = firsts.draw(rng); break;
        case FieldRole::middle_name: r.values[f] = firsts.draw(rng); break;
        case FieldRole::surname: r.values[f] = surnames.draw(rng); break;
        case FieldRole::occupation: r.values[f] = occupations.draw(rng); break;
        case FieldRole::street_name: r.values[f] = streets.draw(rng); break;
        case FieldRole::street_type: r.values[f] = types[type_pick(rng)]; break;
        case FieldRole::street_number:
          r.values[f] = std::to_string(number_pick(rng));
          break;
        case FieldRole::female:
          r.values[f] = *r.values[f] == "1" ? "0" : "1";
          break;
        default: break;
        }
      }
      if (unif(rng) < c.typo && role != FieldRole::female &&
          role != FieldRole::street_type && role != FieldRole::party)
        r.values[f] = typo(*r.values[f], rng);
    }
  };

  SyntheticFiles out;
  std::vector<Record> a_rows, b_rows;
  std::vector<Person> shared;
  for (std::size_t i = 0; i < config.overlap; ++i)
    shared.push_back(fresh_person());

  // Plant an exact number of party switches among major-party individuals.
  std::vector<std::size_t> major;
  for (std::size_t i = 0; i < shared.size(); ++i)
    if (shared[i].party != "other")
      major.push_back(i);
  out.major_party_pairs = major.size();
  out.planted_switches = static_cast<std::size_t>(
      std::llround(config.switch_rate * static_cast<double>(major.size())));
  std::shuffle(major.begin(), major.end(), rng);
  std::vector<bool> switches(shared.size(), false);
  for (std::size_t k = 0; k < out.planted_switches; ++k)
    switches[major[k]] = true;

  for (std::size_t i = 0; i < shared.size(); ++i) {
    Person in_b = shared[i];
    if (unif(rng) < config.mover_rate)
      fresh_address(in_b);
    if (switches[i])
      in_b.party = in_b.party == "dem" ? "rep" : "dem";
    a_rows.push_back(to_record(shared[i]));
    corrupt(a_rows.back());
    b_rows.push_back(to_record(in_b));
    corrupt(b_rows.back());
  }
  for (std::size_t i = config.overlap; i < config.n_a; ++i)
    a_rows.push_back(to_record(fresh_person()));
  for (std::size_t i = config.overlap; i < config.n_b; ++i)
    b_rows.push_back(to_record(fresh_person()));

  std::vector<std::size_t> a_order(a_rows.size()), b_order(b_rows.size());
  std::iota(a_order.begin(), a_order.end(), 0);
  std::iota(b_order.begin(), b_order.end(), 0);
  std::shuffle(a_order.begin(), a_order.end(), rng);
  std::shuffle(b_order.begin(), b_order.end(), rng);
  std::vector<std::size_t> a_pos(a_rows.size()), b_pos(b_rows.size());

  auto assemble = [&](FileLabel label, std::vector<Record> &rows,
                      const std::vector<std::size_t> &order,
                      std::vector<std::size_t> &pos, char prefix) {
    RecordTable t;
    t.label = label;
    t.schema = schema;
    const int width = static_cast<int>(std::to_string(rows.size()).size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      Record r = std::move(rows[order[k]]);
      std::string num = std::to_string(k + 1);
      r.id = std::string(1, prefix) +
             std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
      pos[order[k]] = k;
      t.records.push_back(std::move(r));
    }
    return t;
  };
  out.a = assemble(FileLabel::A, a_rows, a_order, a_pos, 'a');
  out.b = assemble(FileLabel::B, b_rows, b_order, b_pos, 'b');
  for (std::size_t i = 0; i < config.overlap; ++i)
    out.truth.emplace_back(a_pos[i], b_pos[i]);
  std::sort(out.truth.begin(), out.truth.end());
  return out;
}

} // namespace prl
