#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rrpo/common.hpp"
#include "rrpo/spans.hpp"

namespace rrpo::datagen {

// Token map shared by the synthetic tasks and the toy model vocabulary.
// 0..3 are the reserved pad/mask/bos/eos ids from rrpo::lm.
namespace tok {
inline constexpr int kAskFirst = 4;    // which concept leads the video?
inline constexpr int kAskLast = 5;     // which concept ends the video?
inline constexpr int kAskPresent = 6;  // does this concept appear?
inline constexpr int kAskList = 7;     // list the opening concepts in order
inline constexpr int kYes = 8;
inline constexpr int kNo = 9;
inline constexpr int kOptions = 10;    // marker preceding MCQ options
inline constexpr int kVideo = 11;      // marker preceding the frame block
inline constexpr int kExplain = 12;    // marker preceding response filler
inline constexpr int kConceptBase = 16;
inline constexpr int kConceptCount = 40;
inline constexpr int kFillerBase = 56;
inline constexpr int kFillerCount = 8;

inline bool is_concept(int t) { return t >= kConceptBase && t < kConceptBase + kConceptCount; }
inline bool is_filler(int t) { return t >= kFillerBase && t < kFillerBase + kFillerCount; }
}  // namespace tok

// Symbolic video: ordered frames of fixed-width symbol slots.
struct FrameSequence {
    int width = 0;
    std::vector<std::vector<int>> frames;

    void validate() const;
    std::vector<int> flatten() const;
};

enum class PerturbMode { None, RS, Mask, LSMask, GSMask, RSMask };

PerturbMode mode_from_string(const std::string& s);
std::string to_string(PerturbMode m);
bool mode_masks(PerturbMode m);
bool mode_shuffles(PerturbMode m);

struct PerturbConfig {
    PerturbMode mode = PerturbMode::RSMask;
    double mask_min = 0.25;
    double mask_max = 0.50;
    int chunk_size = 0;  // 0 -> max(2, ceil(frames/4))
    uint64_t seed = 0;
    // Masks whole frames instead of per-frame slots (kept behind a flag; the
    // per-frame reading is the default).
    bool whole_frame_mask = false;

    void validate(int frame_count) const;
    int resolved_chunk(int frame_count) const;
};

// Deterministic given (cfg.seed, video). Mask modes replace a per-video
// fraction f ~ U[mask_min, mask_max] of each frame's slots; shuffles permute
// frames (RS), frames within chunks (LS), or chunk order (GS). Combined modes
// mask first, then shuffle.
FrameSequence perturb(const FrameSequence& video, const PerturbConfig& cfg);

enum class TaskType { MCQ, BinaryQA, OpenEnded };

struct SyntheticTask {
    std::string id;
    TaskType type = TaskType::MCQ;
    std::vector<int> question;   // question tokens (type marker, options, ...)
    std::vector<int> answer;     // ground-truth answer tokens
    std::vector<int> options;    // MCQ options or {yes, no}
    std::vector<int> distractors;  // language-prior multiset (never in video)
    int subject = -1;            // queried concept for BinaryQA
    FrameSequence video;
};

struct TaskGenConfig {
    int frames = 6;
    int frame_width = 6;
    int open_list_len = 3;
};

SyntheticTask make_task(uint64_t corpus_seed, int index, const TaskGenConfig& cfg = {});
std::vector<SyntheticTask> make_tasks(uint64_t corpus_seed, int first_index, int count,
                                      const TaskGenConfig& cfg = {});

// Question plus the (clean) video block: the model input for this task.
std::vector<int> task_prompt(const SyntheticTask& task);

// The canonical response: answer concepts, an explain marker, task-seeded
// filler, eos. y- substitutes answer tokens into the same scaffold.
std::vector<int> response_template(const SyntheticTask& task, std::span<const int> answer_tokens);

// Most frequent concept in the distractor multiset, ties toward lowest id.
int language_prior(const SyntheticTask& task);

// Reads the queried information from whatever video it is given; falls back
// to the language prior when masking hides it.
std::vector<int> scripted_responder(const SyntheticTask& task, const FrameSequence& seen);

bool verify(const SyntheticTask& task, std::span<const int> answer_tokens);

struct BuildStats {
    int generated = 0;
    int kept = 0;
    int discarded_correct = 0;
    int dedup_removed = 0;
};

// perturb -> respond -> verify -> keep wrong -> spans by construction -> dedup.
std::vector<spans::PreferencePair> build_pairs(const std::vector<SyntheticTask>& tasks,
                                               const PerturbConfig& cfg,
                                               BuildStats* stats = nullptr);

}  // namespace rrpo::datagen
