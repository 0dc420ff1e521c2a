#include "rrpo/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <map>
#include <set>

#include "rrpo/rng.hpp"
#include "rrpo/toylm.hpp"

namespace rrpo::datagen {

namespace {

std::string concept_name(int token) {
    if (token == tok::kYes) return "yes";
    if (token == tok::kNo) return "no";
    return "c" + std::to_string(token);
}

// How many slots to mask so the realized fraction stays inside [lo, hi].
int masked_count(double f, int width, double lo, double hi) {
    const int min_k = static_cast<int>(std::ceil(lo * width - 1e-9));
    const int max_k = static_cast<int>(std::floor(hi * width + 1e-9));
    if (min_k > max_k) {
        throw ShapeError("perturb: no mask count satisfies [" + std::to_string(lo) + "," +
                         std::to_string(hi) + "] at width " + std::to_string(width));
    }
    const int k = static_cast<int>(std::llround(f * width));
    return std::clamp(k, std::max(min_k, 0), max_k);
}

void mask_slots(std::vector<int>& slots, int count, rng::Rng& r) {
    std::vector<int> order(slots.size());
    for (size_t i = 0; i < slots.size(); ++i) order[i] = static_cast<int>(i);
    r.shuffle(order);
    for (int i = 0; i < count; ++i) slots[static_cast<size_t>(order[static_cast<size_t>(i)])] = lm::kMask;
}

std::vector<std::pair<int, int>> chunk_bounds(int n, int chunk) {
    std::vector<std::pair<int, int>> out;
    for (int start = 0; start < n; start += chunk) {
        out.emplace_back(start, std::min(start + chunk, n));
    }
    return out;
}

}  // namespace

void FrameSequence::validate() const {
    if (width < 4) throw ShapeError("frame sequence: width must be >= 4");
    for (const auto& f : frames) {
        if (static_cast<int>(f.size()) != width) {
            throw ShapeError("frame sequence: ragged frame widths");
        }
    }
}

std::vector<int> FrameSequence::flatten() const {
    std::vector<int> out;
    out.reserve(frames.size() * static_cast<size_t>(width));
    for (const auto& f : frames) out.insert(out.end(), f.begin(), f.end());
    return out;
}

PerturbMode mode_from_string(const std::string& s) {
    std::string k;
    for (char c : s) {
        if (c == '_') {
            k.push_back('-');
        } else {
            k.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (k == "none") return PerturbMode::None;
    if (k == "rs") return PerturbMode::RS;
    if (k == "mask") return PerturbMode::Mask;
    if (k == "ls-mask") return PerturbMode::LSMask;
    if (k == "gs-mask") return PerturbMode::GSMask;
    if (k == "rs-mask") return PerturbMode::RSMask;
    throw UsageError("unknown perturbation mode '" + s + "'");
}

std::string to_string(PerturbMode m) {
    switch (m) {
        case PerturbMode::None: return "None";
        case PerturbMode::RS: return "RS";
        case PerturbMode::Mask: return "Mask";
        case PerturbMode::LSMask: return "LS-Mask";
        case PerturbMode::GSMask: return "GS-Mask";
        case PerturbMode::RSMask: return "RS-Mask";
    }
    throw UsageError("bad perturbation mode enum");
}

bool mode_masks(PerturbMode m) {
    return m == PerturbMode::Mask || m == PerturbMode::LSMask || m == PerturbMode::GSMask ||
           m == PerturbMode::RSMask;
}

bool mode_shuffles(PerturbMode m) {
    return m == PerturbMode::RS || m == PerturbMode::LSMask || m == PerturbMode::GSMask ||
           m == PerturbMode::RSMask;
}

void PerturbConfig::validate(int frame_count) const {
    if (mask_min < 0.0 || mask_max > 1.0 || mask_min > mask_max) {
        throw ShapeError("perturb: mask fraction range must satisfy 0 <= min <= max <= 1");
    }
    if (chunk_size < 0) throw ShapeError("perturb: chunk_size must be positive");
    if (chunk_size > frame_count) {
        throw ShapeError("perturb: chunk_size " + std::to_string(chunk_size) +
                         " exceeds frame count " + std::to_string(frame_count));
    }
}

int PerturbConfig::resolved_chunk(int frame_count) const {
    if (chunk_size > 0) return chunk_size;
    return std::max(2, (frame_count + 3) / 4);
}

FrameSequence perturb(const FrameSequence& video, const PerturbConfig& cfg) {
    video.validate();
    const int n = static_cast<int>(video.frames.size());
    cfg.validate(n);
    FrameSequence out = video;
    if (cfg.mode == PerturbMode::None) return out;

    if (mode_masks(cfg.mode)) {
        rng::Rng frac_rng(rng::subseed(cfg.seed, "mask-fraction"));
        const double f = frac_rng.uniform(cfg.mask_min, cfg.mask_max);
        if (cfg.whole_frame_mask) {
            const int count = masked_count(f, n, cfg.mask_min, cfg.mask_max);
            rng::Rng pick_rng(rng::subseed(cfg.seed, "mask-frames"));
            std::vector<int> order(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
            pick_rng.shuffle(order);
            for (int i = 0; i < count; ++i) {
                auto& frame = out.frames[static_cast<size_t>(order[static_cast<size_t>(i)])];
                std::fill(frame.begin(), frame.end(), lm::kMask);
            }
        } else {
            const int count = masked_count(f, video.width, cfg.mask_min, cfg.mask_max);
            for (int i = 0; i < n; ++i) {
                rng::Rng frame_rng(rng::subseed(cfg.seed, "mask-frame-" + std::to_string(i)));
                mask_slots(out.frames[static_cast<size_t>(i)], count, frame_rng);
            }
        }
    }

    if (mode_shuffles(cfg.mode)) {
        rng::Rng shuffle_rng(rng::subseed(cfg.seed, "shuffle"));
        if (cfg.mode == PerturbMode::RS || cfg.mode == PerturbMode::RSMask) {
            shuffle_rng.shuffle(out.frames);
        } else if (cfg.mode == PerturbMode::LSMask) {
            const int chunk = cfg.resolved_chunk(n);
            for (auto [start, end] : chunk_bounds(n, chunk)) {
                std::vector<std::vector<int>> block(out.frames.begin() + start,
                                                    out.frames.begin() + end);
                shuffle_rng.shuffle(block);
                std::copy(block.begin(), block.end(), out.frames.begin() + start);
            }
        } else {  // GSMask: permute chunk order, keep intra-chunk order
            const int chunk = cfg.resolved_chunk(n);
            auto bounds = chunk_bounds(n, chunk);
            std::vector<int> order(bounds.size());
            for (size_t i = 0; i < bounds.size(); ++i) order[i] = static_cast<int>(i);
            shuffle_rng.shuffle(order);
            std::vector<std::vector<int>> shuffled;
            shuffled.reserve(out.frames.size());
            for (int ci : order) {
                for (int i = bounds[static_cast<size_t>(ci)].first;
                     i < bounds[static_cast<size_t>(ci)].second; ++i) {
                    shuffled.push_back(out.frames[static_cast<size_t>(i)]);
                }
            }
            out.frames = std::move(shuffled);
        }
    }
    return out;
}

SyntheticTask make_task(uint64_t corpus_seed, int index, const TaskGenConfig& cfg) {
    if (cfg.frames < 4 || cfg.frame_width < 4) {
        throw ShapeError("task gen: need at least 4 frames and width 4");
    }
    if (cfg.open_list_len < 2 || cfg.open_list_len > cfg.frames) {
        throw ShapeError("task gen: open_list_len out of range");
    }
    rng::Rng r(rng::subseed(corpus_seed, "task-" + std::to_string(index)));
    SyntheticTask t;
    t.id = "t" + std::to_string(corpus_seed) + "-" + std::to_string(index);

    // Palette: distinct concepts for this video. p0..p3 primaries, p4..p5
    // decor, p6 a plantable subject, p7 a never-present subject.
    std::vector<int> all(tok::kConceptCount);
    for (int i = 0; i < tok::kConceptCount; ++i) all[static_cast<size_t>(i)] = tok::kConceptBase + i;
    r.shuffle(all);
    std::vector<int> palette(all.begin(), all.begin() + 8);

    const int f_count = cfg.frames;
    t.video.width = cfg.frame_width;
    t.video.frames.assign(static_cast<size_t>(f_count),
                          std::vector<int>(static_cast<size_t>(cfg.frame_width), 0));
    std::vector<int> primaries(static_cast<size_t>(f_count));
    for (int i = 0; i < f_count; ++i) {
        primaries[static_cast<size_t>(i)] = i < 3 ? palette[static_cast<size_t>(i)]
                                                  : palette[static_cast<size_t>(r.pick(0, 3))];
    }
    for (int i = 0; i < f_count; ++i) {
        auto& frame = t.video.frames[static_cast<size_t>(i)];
        frame[0] = primaries[static_cast<size_t>(i)];
        for (int s = 1; s < cfg.frame_width; ++s) frame[static_cast<size_t>(s)] = palette[static_cast<size_t>(r.pick(0, 5))];
    }

    // Distractor multiset: concepts that never appear in the video.
    std::vector<int> pool(all.begin() + 8, all.end());
    r.shuffle(pool);
    for (int i = 0; i < 3; ++i) {
        const int reps = r.pick(1, 4);
        for (int k = 0; k < reps; ++k) t.distractors.push_back(pool[static_cast<size_t>(i)]);
    }

    const int kind = r.pick(0, 9);
    if (kind < 4) {
        t.type = TaskType::MCQ;
        const bool first = kind < 2;
        const int truth = first ? primaries.front() : primaries.back();
        t.options = {truth, pool[0], pool[1], pool[2]};
        r.shuffle(t.options);
        t.question = {first ? tok::kAskFirst : tok::kAskLast, tok::kOptions};
        t.question.insert(t.question.end(), t.options.begin(), t.options.end());
        t.answer = {truth};
    } else if (kind < 7) {
        t.type = TaskType::BinaryQA;
        const bool present = r.pick(0, 1) == 1;
        t.subject = present ? palette[6] : palette[7];
        if (present) {
            const int frame = r.pick(0, f_count - 1);
            const int slot = r.pick(1, cfg.frame_width - 1);
            t.video.frames[static_cast<size_t>(frame)][static_cast<size_t>(slot)] = t.subject;
        }
        t.options = {tok::kYes, tok::kNo};
        t.question = {tok::kAskPresent, t.subject};
        t.answer = {present ? tok::kYes : tok::kNo};
    } else {
        t.type = TaskType::OpenEnded;
        t.question = {tok::kAskList};
        t.answer.assign(primaries.begin(), primaries.begin() + cfg.open_list_len);
    }
    return t;
}

std::vector<SyntheticTask> make_tasks(uint64_t corpus_seed, int first_index, int count,
                                      const TaskGenConfig& cfg) {
    std::vector<SyntheticTask> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(make_task(corpus_seed, first_index + i, cfg));
    return out;
}

std::vector<int> task_prompt(const SyntheticTask& task) {
    std::vector<int> p = task.question;
    p.push_back(tok::kVideo);
    const auto flat = task.video.flatten();
    p.insert(p.end(), flat.begin(), flat.end());
    return p;
}

std::vector<int> response_template(const SyntheticTask& task,
                                   std::span<const int> answer_tokens) {
    rng::Rng r(rng::fnv1a64(task.id) ^ 0x5eedf111ull);
    std::vector<int> out(answer_tokens.begin(), answer_tokens.end());
    out.push_back(tok::kExplain);
    const int filler_len = 5 + static_cast<int>(r.bounded(4));  // 5..8
    for (int i = 0; i < filler_len; ++i) {
        out.push_back(tok::kFillerBase + static_cast<int>(r.bounded(tok::kFillerCount)));
    }
    out.push_back(lm::kEos);
    return out;
}

int language_prior(const SyntheticTask& task) {
    if (task.distractors.empty()) throw ShapeError("task has no distractor vocabulary");
    std::map<int, int> freq;
    for (int d : task.distractors) freq[d]++;
    int best = task.distractors.front();
    int best_n = 0;
    for (const auto& [tok_id, n] : freq) {
        if (n > best_n) {  // map iterates in id order, so ties keep the lowest
            best = tok_id;
            best_n = n;
        }
    }
    return best;
}

std::vector<int> scripted_responder(const SyntheticTask& task, const FrameSequence& seen) {
    seen.validate();
    const int prior = language_prior(task);
    switch (task.type) {
        case TaskType::MCQ: {
            const bool first = task.question.at(0) == tok::kAskFirst;
            const int s = first ? seen.frames.front().at(0) : seen.frames.back().at(0);
            if (s == lm::kMask) return {prior};
            const bool among = std::find(task.options.begin(), task.options.end(), s) !=
                               task.options.end();
            return {among ? s : prior};
        }
        case TaskType::BinaryQA: {
            for (const auto& frame : seen.frames) {
                for (int slot : frame) {
                    if (slot == task.subject) return {tok::kYes};
                }
            }
            return {tok::kNo};
        }
        case TaskType::OpenEnded: {
            std::vector<int> out;
            for (size_t f = 0; f < task.answer.size() && f < seen.frames.size(); ++f) {
                const int s = seen.frames[f].at(0);
                out.push_back(s == lm::kMask ? prior : s);
            }
            return out;
        }
    }
    throw UsageError("bad task type enum");
}

bool verify(const SyntheticTask& task, std::span<const int> answer_tokens) {
    switch (task.type) {
        case TaskType::MCQ: {
            for (int t : answer_tokens) {
                if (tok::is_concept(t)) return t == task.answer.front();
            }
            return false;
        }
        case TaskType::BinaryQA: {
            for (int t : answer_tokens) {
                if (t == tok::kYes || t == tok::kNo) return t == task.answer.front();
            }
            return false;
        }
        case TaskType::OpenEnded: {
            std::set<int> got, want(task.answer.begin(), task.answer.end());
            for (int t : answer_tokens) {
                if (tok::is_concept(t)) got.insert(t);
            }
            return got == want;
        }
    }
    throw UsageError("bad task type enum");
}

std::vector<spans::PreferencePair> build_pairs(const std::vector<SyntheticTask>& tasks,
                                               const PerturbConfig& cfg, BuildStats* stats) {
    BuildStats local;
    local.generated = static_cast<int>(tasks.size());
    std::vector<spans::PreferencePair> pairs;
    for (const auto& task : tasks) {
        PerturbConfig per_task = cfg;
        per_task.seed = rng::subseed(cfg.seed, "perturb:" + task.id);
        const FrameSequence seen = perturb(task.video, per_task);
        const std::vector<int> answer = scripted_responder(task, seen);
        if (verify(task, answer)) {
            local.discarded_correct++;
            continue;
        }
        spans::PreferencePair pair;
        pair.id = task.id;
        pair.prompt = task_prompt(task);
        pair.preferred = response_template(task, task.answer);
        pair.non_preferred = response_template(task, answer);
        // Differing concept positions are known by construction; adjacent
        // differences merge into one span.
        const size_t k = task.answer.size();
        int phrase = 1;
        size_t i = 0;
        std::vector<std::string> correct_names, wrong_names;
        while (i < k) {
            if (pair.preferred[i] == pair.non_preferred[i]) {
                ++i;
                continue;
            }
            size_t j = i;
            while (j + 1 < k && pair.preferred[j + 1] != pair.non_preferred[j + 1]) ++j;
            const int start = static_cast<int>(i) + 1;  // 1-based inclusive
            const int end = static_cast<int>(j) + 1;
            pair.spans.entries.push_back({phrase++, {start, end}, {start, end}});
            for (size_t p = i; p <= j; ++p) {
                std::string suffix;
                if (task.type == TaskType::BinaryQA) {
                    suffix = " " + concept_name(task.subject);
                }
                correct_names.push_back(concept_name(pair.preferred[p]) + suffix);
                wrong_names.push_back(concept_name(pair.non_preferred[p]) + suffix);
            }
            i = j + 1;
        }
        std::string ck_correct, ck_wrong;
        for (size_t n = 0; n < correct_names.size(); ++n) {
            if (n) {
                ck_correct += ' ';
                ck_wrong += ' ';
            }
            ck_correct += correct_names[n];
            ck_wrong += wrong_names[n];
        }
        pair.concept_key = {spans::normalize_concept(ck_correct),
                            spans::normalize_concept(ck_wrong)};
        pairs.push_back(std::move(pair));
    }
    const int before = static_cast<int>(pairs.size());
    pairs = spans::dedup(std::move(pairs));
    local.dedup_removed = before - static_cast<int>(pairs.size());
    local.kept = static_cast<int>(pairs.size());
    if (stats) *stats = local;
    return pairs;
}

}  // namespace rrpo::datagen
