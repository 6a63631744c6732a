#ifndef SUPDRIVE_SEARCH_ENV_HPP_
#define SUPDRIVE_SEARCH_ENV_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "supdrive/common.hpp"

namespace supdrive {

// Eye-movement and encoding timing (EMMA). Encoding time grows with the
// negative log frequency and exponentially with eccentricity.
struct EmmaParams {
  double encoding_scale = 0.006;  // K, s
  double eccentricity_slope = 0.4;  // k, 1/deg
  double frequency = 0.1;         // f in (0, 1]
  double saccade_base = 0.07;     // s
  double saccade_per_deg = 0.002; // s/deg
  double element_spacing = 2.0;   // deg

  void validate() const {
    if (!(encoding_scale > 0) || !(eccentricity_slope > 0) || !(frequency > 0) ||
        frequency > 1 || !(saccade_base > 0) || !(saccade_per_deg > 0) ||
        !(element_spacing > 0))
      throw ConfigError("EMMA parameters must be positive with frequency <= 1");
  }
};

inline double emma_duration(double eccentricity_deg, const EmmaParams& p) {
  return p.saccade_base + p.saccade_per_deg * eccentricity_deg +
         p.encoding_scale * (-std::log(p.frequency)) *
             std::exp(p.eccentricity_slope * eccentricity_deg);
}

struct SearchEnvConfig {
  int rows = 2;
  int cols = 3;
  int task_type = 1;  // 0: target present, 1: encode all
  EmmaParams emma;
  double completion_bonus = 1.0;  // per element
  double inter_task_delay_s = 1.0;
  int max_rows = 4;  // observation padding
  int max_cols = 4;

  void validate() const {
    if (rows < 1 || cols < 1) throw ConfigError("search grid must have >= 1 element");
    if (rows > max_rows || cols > max_cols)
      throw ConfigError("search grid exceeds observation padding");
    if (task_type != 0 && task_type != 1) throw ConfigError("task_type must be 0 or 1");
    if (!(completion_bonus >= 0)) throw ConfigError("completion_bonus must be >= 0");
    if (!(inter_task_delay_s >= 0)) throw ConfigError("inter_task_delay must be >= 0");
    emma.validate();
  }
  int max_elements() const { return max_rows * max_cols; }
  // VSTM bits + fixation one-hot (incl. centre) + rows, cols, type, found.
  int observation_dim() const { return 2 * max_elements() + 1 + 4; }
};

inline constexpr int kFixationCenter = -1;

struct SearchStepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  double duration = 0.0;
};

class SearchEnv {
 public:
  explicit SearchEnv(SearchEnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const SearchEnvConfig& config() const { return cfg_; }

  std::vector<double> reset(int rows, int cols, int task_type, std::uint64_t seed) {
    SearchEnvConfig c = cfg_;
    c.rows = rows;
    c.cols = cols;
    c.task_type = task_type;
    c.validate();
    cfg_ = c;
    return reset(seed);
  }

  std::vector<double> reset(std::uint64_t seed) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x53524348));  // "SRCH"
    encoded_.assign(num_elements(), false);
    n_encoded_ = 0;
    fixation_ = kFixationCenter;
    elapsed_ = 0.0;
    steps_ = 0;
    found_ = false;
    done_ = false;
    target_.reset();
    if (cfg_.task_type == 0) target_ = rng.uniform_int(0, num_elements() - 1);
    return observation();
  }

  // Element position in degrees; row-major grid centred on the display.
  Vec2 element_position(int e) const {
    if (e == kFixationCenter) return {0.0, 0.0};
    const int r = e / cfg_.cols;
    const int c = e % cfg_.cols;
    const double s = cfg_.emma.element_spacing;
    return {(c - (cfg_.cols - 1) / 2.0) * s, ((cfg_.rows - 1) / 2.0 - r) * s};
  }

  double fixation_duration(int from, int to) const {
    return emma_duration((element_position(to) - element_position(from)).norm(), cfg_.emma);
  }

  SearchStepResult step(int element) {
    if (done_) throw StateError("search env stepped after task completion");
    if (element < 0 || element >= num_elements())
      throw ContractViolation("search action outside the element grid");
    SearchStepResult out;
    out.duration = fixation_duration(fixation_, element);
    fixation_ = element;
    if (!encoded_[element]) {
      encoded_[element] = true;
      ++n_encoded_;
    }
    elapsed_ += out.duration;
    ++steps_;
    out.reward = -out.duration;
    if (cfg_.task_type == 0) {
      found_ = target_ && element == *target_;
      done_ = found_;
    } else {
      done_ = n_encoded_ == num_elements();
    }
    if (done_) out.reward += cfg_.completion_bonus * num_elements();
    out.done = done_;
    out.observation = observation();
    return out;
  }

  std::vector<double> observation() const {
    const int m = cfg_.max_elements();
    std::vector<double> o(cfg_.observation_dim(), 0.0);
    // Padded slots use the max-grid index so positions are stable per grid.
    for (int e = 0; e < num_elements(); ++e) o[e] = encoded_[e] ? 1.0 : 0.0;
    o[m + (fixation_ == kFixationCenter ? m : fixation_)] = 1.0;
    o[2 * m + 1] = static_cast<double>(cfg_.rows) / cfg_.max_rows;
    o[2 * m + 2] = static_cast<double>(cfg_.cols) / cfg_.max_cols;
    o[2 * m + 3] = static_cast<double>(cfg_.task_type);
    o[2 * m + 4] = found_ ? 1.0 : 0.0;
    return o;
  }

  std::vector<bool> action_mask() const {
    std::vector<bool> mask(cfg_.max_elements(), false);
    for (int e = 0; e < num_elements(); ++e) mask[e] = true;
    return mask;
  }

  int num_elements() const { return cfg_.rows * cfg_.cols; }
  int rows() const { return cfg_.rows; }
  int cols() const { return cfg_.cols; }
  int task_type() const { return cfg_.task_type; }
  int fixation() const { return fixation_; }
  std::optional<int> target() const { return target_; }
  const std::vector<bool>& encoded() const { return encoded_; }
  int encoded_count() const { return n_encoded_; }
  double elapsed() const { return elapsed_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }

 private:
  SearchEnvConfig cfg_;
  std::vector<bool> encoded_;
  int n_encoded_ = 0;
  int fixation_ = kFixationCenter;
  std::optional<int> target_;
  bool found_ = false;
  bool done_ = true;
  double elapsed_ = 0.0;
  int steps_ = 0;
};

inline void to_json(nlohmann::json& j, const EmmaParams& p) {
  j = {{"encoding_scale_s", p.encoding_scale},
       {"eccentricity_slope_per_deg", p.eccentricity_slope},
       {"frequency", p.frequency},
       {"saccade_base_s", p.saccade_base},
       {"saccade_per_deg_s", p.saccade_per_deg},
       {"element_spacing_deg", p.element_spacing}};
}
inline void from_json(const nlohmann::json& j, EmmaParams& p) {
  p.encoding_scale = j.value("encoding_scale_s", p.encoding_scale);
  p.eccentricity_slope = j.value("eccentricity_slope_per_deg", p.eccentricity_slope);
  p.frequency = j.value("frequency", p.frequency);
  p.saccade_base = j.value("saccade_base_s", p.saccade_base);
  p.saccade_per_deg = j.value("saccade_per_deg_s", p.saccade_per_deg);
  p.element_spacing = j.value("element_spacing_deg", p.element_spacing);
}

inline void to_json(nlohmann::json& j, const SearchEnvConfig& c) {
  j = {{"rows", c.rows},
       {"cols", c.cols},
       {"task_type", c.task_type},
       {"emma", c.emma},
       {"completion_bonus_per_element", c.completion_bonus},
       {"inter_task_delay_s", c.inter_task_delay_s},
       {"max_rows", c.max_rows},
       {"max_cols", c.max_cols}};
}
inline void from_json(const nlohmann::json& j, SearchEnvConfig& c) {
  c.rows = j.value("rows", c.rows);
  c.cols = j.value("cols", c.cols);
  c.task_type = j.value("task_type", c.task_type);
  if (j.contains("emma")) j.at("emma").get_to(c.emma);
  c.completion_bonus = j.value("completion_bonus_per_element", c.completion_bonus);
  c.inter_task_delay_s = j.value("inter_task_delay_s", c.inter_task_delay_s);
  c.max_rows = j.value("max_rows", c.max_rows);
  c.max_cols = j.value("max_cols", c.max_cols);
}

}  // namespace supdrive

#endif  // SUPDRIVE_SEARCH_ENV_HPP_
