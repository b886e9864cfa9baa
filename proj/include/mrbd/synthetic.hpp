#pragma once

// Desk-scale stand-in for open-domain dialogue data: a fixed bank of
// history -> response templates whose slots are filled from small word
// lists. A response is a deterministic function of its history, so any
// response that disagrees with its template is label noise.

#include <array>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mrbd/corpus.hpp"
#include "mrbd/rng.hpp"

namespace mrbd::synthetic {

enum class Slot { name, place, food, activity, thing };

struct Template {
  std::string history;   // {0}/{1} mark the slots
  std::string response;
  std::array<Slot, 2> slots;
};

inline const std::vector<Template>& template_bank() {
  static const std::vector<Template> bank{
      {"hi {0} how was your trip to {1}", "it was wonderful {1} is a lovely place", {Slot::name, Slot::place}},
      {"do you want to eat {0} with {1} tonight", "sure i would love some {0} with {1}", {Slot::food, Slot::name}},
      {"i am going {0} near {1} this weekend", "have fun {0} and say hello to {1} for me", {Slot::activity, Slot::place}},
      {"could you lend me your {0} for {1}", "of course take my {0} but bring it back before {1} leaves", {Slot::thing, Slot::name}},
      {"where did you buy that {0}", "i found the {0} at a small shop downtown last week", {Slot::thing, Slot::thing}},
      {"what does {0} like doing on sundays", "{0} usually spends sundays {1} with friends", {Slot::name, Slot::activity}},
      {"is {0} far from {1}", "no {0} is only a short train ride from {1}", {Slot::place, Slot::place}},
      {"my doctor says i should stop eating {0}", "maybe try {1} instead of {0} it is healthier", {Slot::food, Slot::food}},
      {"have you ever tried {0} in {1}", "yes {0} in {1} was the best i ever had", {Slot::activity, Slot::place}},
      {"please tell {0} that the {1} is broken", "okay i will tell {0} about the {1} right away", {Slot::name, Slot::thing}},
      {"what should i cook for {0}", "{0} really enjoys {1} so cook that", {Slot::name, Slot::food}},
      {"the weather in {0} is terrible today", "then stay home and read instead of going to {0}", {Slot::place, Slot::place}},
      {"who taught you {0}", "{1} taught me {0} when i was young", {Slot::activity, Slot::name}},
      {"i left my {0} at {1} house", "do not worry i will ask {1} to keep the {0} safe", {Slot::thing, Slot::name}},
      {"can we meet in {0} tomorrow morning", "yes let us meet in {0} around nine", {Slot::place, Slot::place}},
      {"how much did the {0} cost", "the {0} was cheaper than i expected honestly", {Slot::thing, Slot::thing}},
      {"i heard {0} moved to {1}", "right {0} found a new job in {1} last month", {Slot::name, Slot::place}},
      {"let us order {0} for the party", "good idea everyone likes {0} and maybe some {1} too", {Slot::food, Slot::food}},
      {"do you still go {0} every day", "not anymore i go {0} only on weekends now", {Slot::activity, Slot::activity}},
      {"why is {0} so upset", "{0} lost the {1} this morning and cannot find it", {Slot::name, Slot::thing}},
      {"is it safe to go {0} in {1}", "it is safe to go {0} in {1} if you are careful", {Slot::activity, Slot::place}},
      {"i cannot find the {0} anywhere", "check the kitchen i saw the {0} there earlier", {Slot::thing, Slot::thing}},
      {"what is the best food in {0}", "you must try the {1} when you visit {0}", {Slot::place, Slot::food}},
      {"thanks for the {0} you gave me", "you are welcome i hope the {0} is useful", {Slot::thing, Slot::thing}},
  };
  return bank;
}

inline const std::vector<std::string>& fillers(Slot s) {
  static const std::vector<std::string> names{"anna", "ben", "carla", "david", "emma", "felix", "grace", "henry",
                                              "iris", "jack", "kate", "leo", "maria", "nick", "olga", "paul"};
  static const std::vector<std::string> places{"paris", "london", "tokyo", "berlin", "madrid", "rome", "boston", "sydney",
                                               "cairo", "dublin", "oslo", "lima", "seoul", "vienna", "prague", "delhi"};
  static const std::vector<std::string> foods{"pizza", "sushi", "pasta", "curry", "tacos", "salad", "soup", "noodles",
                                              "burgers", "dumplings", "pancakes", "rice", "cheese", "bread", "fish", "steak"};
  static const std::vector<std::string> activities{"swimming", "hiking", "cycling", "dancing", "fishing", "skiing",
                                                   "running", "painting", "climbing", "sailing", "skating", "singing",
                                                   "rowing", "surfing", "camping", "golfing"};
  static const std::vector<std::string> things{"umbrella", "camera", "laptop", "bicycle", "guitar", "jacket", "wallet",
                                               "phone", "lamp", "watch", "backpack", "ladder", "kettle", "radio",
                                               "scarf", "helmet"};
  switch (s) {
    case Slot::name: return names;
    case Slot::place: return places;
    case Slot::food: return foods;
    case Slot::activity: return activities;
    case Slot::thing: return things;
  }
  return names;
}

namespace detail {

inline Words fill(const std::string& pattern, const std::array<std::string, 2>& values) {
  Words out;
  for (const auto& tok : split_tokens(pattern)) {
    if (tok == "{0}") out.push_back(values[0]);
    else if (tok == "{1}") out.push_back(values[1]);
    else out.push_back(tok);
  }
  return out;
}

struct Instance {
  std::size_t tmpl;
  std::size_t a, b;
  auto operator<=>(const Instance&) const = default;
};

inline TextPair realise(const Instance& inst) {
  const auto& t = template_bank()[inst.tmpl];
  const std::array<std::string, 2> values{fillers(t.slots[0])[inst.a], fillers(t.slots[1])[inst.b]};
  return {fill(t.history, values), fill(t.response, values)};
}

}  // namespace detail

/// The template response implied by a history, or nothing when the history
/// does not come from the bank.
inline std::optional<Words> expected_response(const Words& history) {
  const auto& bank = template_bank();
  for (const auto& t : bank) {
    const Words pattern = split_tokens(t.history);
    if (pattern.size() != history.size()) continue;
    std::array<std::string, 2> values;
    std::array<bool, 2> seen{false, false};
    bool ok = true;
    for (std::size_t i = 0; i < pattern.size() && ok; ++i) {
      if (pattern[i] == "{0}" || pattern[i] == "{1}") {
        const std::size_t k = pattern[i] == "{0}" ? 0 : 1;
        values[k] = history[i];
        seen[k] = true;
      } else {
        ok = pattern[i] == history[i];
      }
    }
    if (!ok) continue;
    // Slots that appear only in the response cannot be recovered from the
    // history; those templates pick them deterministically from slot 0.
    for (std::size_t k = 0; k < 2; ++k) {
      if (!seen[k]) {
        const auto& other = fillers(t.slots[k]);
        const auto& src = fillers(t.slots[0]);
        const auto pos = std::find(src.begin(), src.end(), values[0]) - src.begin();
        values[k] = other[(static_cast<std::size_t>(pos) + 5) % other.size()];
      }
    }
    return detail::fill(t.response, values);
  }
  return std::nullopt;
}

struct Sizes {
  std::size_t train = 0, validation = 0, test = 0;
};

struct Splits {
  TextCorpus train, validation, test;
};

/// Draws disjoint filled instances of the first `template_count` templates
/// for the three splits, then randomises round(noise_rate * |train|) train
/// responses with responses of other templates.
inline Splits generate(std::size_t template_count, double noise_rate, Sizes sizes, std::uint64_t seed) {
  const auto& bank = template_bank();
  if (template_count == 0 || template_count > bank.size()) {
    throw std::invalid_argument("synthetic: template count must be in [1, " + std::to_string(bank.size()) + "]");
  }
  if (sizes.train == 0 || sizes.validation == 0 || sizes.test == 0) {
    throw std::invalid_argument("synthetic: split sizes must be positive");
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw std::invalid_argument("synthetic: noise rate must be in [0,1]");
  }
  const std::size_t total = sizes.train + sizes.validation + sizes.test;
  // Distinct instances are keyed by the slots the history exposes.
  std::size_t capacity = 0;
  for (std::size_t t = 0; t < template_count; ++t) {
    const auto& h = bank[t].history;
    std::size_t n = 1;
    if (h.find("{0}") != std::string::npos) n *= 16;
    if (h.find("{1}") != std::string::npos) n *= 16;
    capacity += n;
  }
  if (total * 5 > capacity * 4) {
    throw std::invalid_argument("synthetic: requested " + std::to_string(total) +
                                " pairs exceeds template capacity");
  }
  Rng rng = make_rng(seed, "synthetic");
  std::uniform_int_distribution<std::size_t> pick_tmpl(0, template_count - 1), pick_fill(0, 15);
  std::set<std::pair<Words, Words>> seen;
  std::vector<TextPair> pool;
  while (pool.size() < total) {
    detail::Instance inst{pick_tmpl(rng), pick_fill(rng), pick_fill(rng)};
    TextPair p = detail::realise(inst);
    p.response = *expected_response(p.history);
    if (!seen.insert({p.history, p.response}).second) continue;
    pool.push_back(std::move(p));
  }
  Splits out;
  out.train.split = Split::train;
  out.validation.split = Split::validation;
  out.test.split = Split::test;
  out.train.pairs.assign(pool.begin(), pool.begin() + sizes.train);
  out.validation.pairs.assign(pool.begin() + sizes.train, pool.begin() + sizes.train + sizes.validation);
  out.test.pairs.assign(pool.begin() + sizes.train + sizes.validation, pool.end());

  const auto noisy = static_cast<std::size_t>(std::llround(noise_rate * static_cast<double>(sizes.train)));
  std::vector<std::size_t> order(sizes.train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng noise_rng = make_rng(seed, "synthetic-noise");
  std::shuffle(order.begin(), order.end(), noise_rng);
  std::uniform_int_distribution<std::size_t> any_tmpl(0, bank.size() - 1);
  for (std::size_t k = 0; k < noisy; ++k) {
    auto& pair = out.train.pairs[order[k]];
    const Words expected = pair.response;
    for (;;) {
      detail::Instance inst{any_tmpl(noise_rng), pick_fill(noise_rng), pick_fill(noise_rng)};
      Words candidate = *expected_response(detail::realise(inst).history);
      if (candidate != expected) {
        pair.response = std::move(candidate);
        break;
      }
    }
  }
  return out;
}

}  // namespace mrbd::synthetic
