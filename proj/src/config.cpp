#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "udc/errors.hpp"
#include "udc/trainer.hpp"

namespace udc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("invalid value '" + value + "' for " + key);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) bad_value(key, value);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  bad_value(key, value);
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) bad_value(key, value);
  return out;
}

}  // namespace

double TrainConfig::base_lr() const {
  if (lr > 0.0) return lr;
  return stage == Stage::kOne ? 1e-4 : 2e-4;
}

double TrainConfig::lr_at(int epoch) const {
  return base_lr() * std::pow(lr_decay_factor, epoch / lr_decay_every);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (!std::isfinite(lr) || lr < 0.0) throw std::invalid_argument("lr must be > 0");
  if (lr_decay_every < 1) throw std::invalid_argument("lr_decay_every must be >= 1");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
    throw std::invalid_argument("lr_decay_factor must be in (0, 1]");
  }
  if (stage == Stage::kOne && loss != "ud" && loss != "mse") {
    throw std::invalid_argument("stage 1 loss must be ud or mse, got " + loss);
  }
  if (stage == Stage::kTwo && loss != "ur" && loss != "urb") {
    throw std::invalid_argument("stage 2 loss must be ur or urb, got " + loss);
  }
  model.validate();
  if (!scale_weights.empty()) {
    if (static_cast<int>(scale_weights.size()) != model.ns) {
      throw std::invalid_argument("scale_weights needs one entry per scale");
    }
    for (double w : scale_weights) {
      if (!(w > 0.0)) throw std::invalid_argument("scale_weights must be positive");
    }
  }
}

void apply_setting(TrainConfig& cfg, const std::string& key,
                   const std::string& value) {
  if (key == "stage") {
    const int s = parse_number<int>(key, value);
    if (s != 1 && s != 2) bad_value(key, value);
    cfg.stage = static_cast<Stage>(s);
  } else if (key == "lr") {
    cfg.lr = parse_number<double>(key, value);
  } else if (key == "epochs") {
    cfg.epochs = parse_number<int>(key, value);
  } else if (key == "batch") {
    cfg.batch = parse_number<int>(key, value);
  } else if (key == "lr_decay_every") {
    cfg.lr_decay_every = parse_number<int>(key, value);
  } else if (key == "lr_decay_factor") {
    cfg.lr_decay_factor = parse_number<double>(key, value);
  } else if (key == "loss") {
    cfg.loss = value;
  } else if (key == "jeffrey") {
    cfg.jeffrey = parse_bool(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "scale_weights") {
    cfg.scale_weights = parse_list<double>(key, value);
  } else if (key == "ns") {
    cfg.model.ns = parse_number<int>(key, value);
  } else if (key == "guide_channels") {
    cfg.model.guide_channels = parse_number<int>(key, value);
  } else if (key == "encoder") {
    cfg.model.encoder = parse_list<int>(key, value);
  } else if (key == "decoder") {
    cfg.model.decoder = parse_list<int>(key, value);
  } else if (key == "residual_encoder") {
    cfg.model.residual_encoder = parse_list<int>(key, value);
  } else if (key == "residual_decoder") {
    cfg.model.residual_decoder = parse_list<int>(key, value);
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

TrainConfig parse_train_config(std::istream& in, TrainConfig cfg) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.resize(hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value");
    }
    apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig read_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_train_config(in, std::move(base));
}

}  // namespace udc
