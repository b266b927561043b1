#include "otto/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace otto {

using nlohmann::json;

bool OfflineDataset::operator==(const OfflineDataset& o) const {
  if (env_id != o.env_id || seed != o.seed || d_s != o.d_s || d_a != o.d_a) return false;
  if (!(stats == o.stats)) return false;
  if (trajectories.size() != o.trajectories.size()) return false;
  for (size_t i = 0; i < trajectories.size(); ++i) {
    const auto& a = trajectories[i];
    const auto& b = o.trajectories[i];
    if (a.source != b.source || a.steps.size() != b.steps.size()) return false;
    for (size_t j = 0; j < a.steps.size(); ++j) {
      const auto& x = a.steps[j];
      const auto& y = b.steps[j];
      if (x.state != y.state || x.action != y.action || x.reward != y.reward ||
          x.terminal != y.terminal || x.t != y.t)
        return false;
    }
  }
  return true;
}

Stats compute_stats(const std::vector<Trajectory>& trajectories, int d_s, int d_a) {
  Stats st;
  st.state_mean.assign(d_s, 0.0);
  st.state_std.assign(d_s, 0.0);
  st.action_mean.assign(d_a, 0.0);
  st.action_std.assign(d_a, 0.0);
  size_t n = 0;
  for (const auto& tr : trajectories) n += tr.steps.size();
  if (n == 0) throw std::invalid_argument("compute_stats: empty dataset");

  for (const auto& tr : trajectories) {
    for (const auto& s : tr.steps) {
      for (int i = 0; i < d_s; ++i) st.state_mean[i] += s.state[i];
      for (int i = 0; i < d_a; ++i) st.action_mean[i] += s.action[i];
      st.reward_mean += s.reward;
    }
  }
  for (int i = 0; i < d_s; ++i) st.state_mean[i] /= double(n);
  for (int i = 0; i < d_a; ++i) st.action_mean[i] /= double(n);
  st.reward_mean /= double(n);

  double rvar = 0.0;
  for (const auto& tr : trajectories) {
    for (const auto& s : tr.steps) {
      for (int i = 0; i < d_s; ++i) {
        double d = s.state[i] - st.state_mean[i];
        st.state_std[i] += d * d;
      }
      for (int i = 0; i < d_a; ++i) {
        double d = s.action[i] - st.action_mean[i];
        st.action_std[i] += d * d;
      }
      double d = s.reward - st.reward_mean;
      rvar += d * d;
    }
  }
  auto finish = [n](double sq) { return std::max(std::sqrt(sq / double(n)), kStdFloor); };
  for (int i = 0; i < d_s; ++i) st.state_std[i] = finish(st.state_std[i]);
  for (int i = 0; i < d_a; ++i) st.action_std[i] = finish(st.action_std[i]);
  st.reward_std = finish(rvar);
  return st;
}

namespace {

json stats_to_json(const Stats& st) {
  return json{{"state_mean", st.state_mean},   {"state_std", st.state_std},
              {"action_mean", st.action_mean}, {"action_std", st.action_std},
              {"reward_mean", st.reward_mean}, {"reward_std", st.reward_std}};
}

Stats stats_from_json(const json& j) {
  Stats st;
  st.state_mean = j.at("state_mean").get<std::vector<double>>();
  st.state_std = j.at("state_std").get<std::vector<double>>();
  st.action_mean = j.at("action_mean").get<std::vector<double>>();
  st.action_std = j.at("action_std").get<std::vector<double>>();
  st.reward_mean = j.at("reward_mean").get<double>();
  st.reward_std = j.at("reward_std").get<double>();
  return st;
}

}  // namespace

void write_dataset(const OfflineDataset& d, const std::filesystem::path& dir) {
  if (d.trajectories.empty()) throw std::invalid_argument("write_dataset: empty dataset");
  size_t horizon = d.trajectories.front().steps.size();
  bool generated = d.trajectories.front().source == TrajectorySource::generated;
  for (const auto& tr : d.trajectories) {
    if (tr.steps.empty()) throw std::invalid_argument("write_dataset: empty trajectory");
    if (tr.steps.size() != horizon)
      throw std::invalid_argument("write_dataset: trajectories must share one length");
  }

  std::filesystem::create_directories(dir);

  json meta{{"format_version", 1},
            {"env_id", d.env_id},
            {"d_s", d.d_s},
            {"d_a", d.d_a},
            {"n_traj", d.trajectories.size()},
            {"horizon", horizon},
            {"seed", d.seed},
            {"source", generated ? "generated" : "collected"},
            {"statistics", stats_to_json(d.stats)}};
  if (generated) {
    std::vector<int64_t> starts;
    for (const auto& tr : d.trajectories) starts.push_back(tr.start_index());
    meta["start_indices"] = starts;
  }
  std::ofstream mf(dir / "meta.json");
  mf << meta.dump(2) << "\n";
  if (!mf) throw std::runtime_error("write_dataset: cannot write meta.json");

  const size_t stride = size_t(d.d_s) + size_t(d.d_a) + 2;
  std::vector<double> buf;
  buf.reserve(d.transition_count() * stride);
  for (const auto& tr : d.trajectories) {
    for (const auto& s : tr.steps) {
      buf.insert(buf.end(), s.state.begin(), s.state.end());
      buf.insert(buf.end(), s.action.begin(), s.action.end());
      buf.push_back(s.reward);
      buf.push_back(s.terminal ? 1.0 : 0.0);
    }
  }
  std::ofstream bf(dir / "data.bin", std::ios::binary);
  bf.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(double)));
  if (!bf) throw std::runtime_error("write_dataset: cannot write data.bin");
}

OfflineDataset read_dataset(const std::filesystem::path& dir) {
  using Code = DatasetIoError::Code;
  json meta;
  {
    std::ifstream mf(dir / "meta.json");
    if (!mf) throw DatasetIoError(Code::corrupt_header, "missing meta.json in " + dir.string());
    try {
      mf >> meta;
    } catch (const json::exception& e) {
      throw DatasetIoError(Code::corrupt_header, std::string("bad meta.json: ") + e.what());
    }
  }

  OfflineDataset d;
  size_t n_traj = 0, horizon = 0;
  bool generated = false;
  std::vector<int64_t> starts;
  try {
    if (meta.at("format_version").get<int>() != 1)
      throw DatasetIoError(Code::corrupt_header, "unsupported format_version");
    d.env_id = meta.at("env_id").get<std::string>();
    d.d_s = meta.at("d_s").get<int>();
    d.d_a = meta.at("d_a").get<int>();
    d.seed = meta.at("seed").get<uint64_t>();
    n_traj = meta.at("n_traj").get<size_t>();
    horizon = meta.at("horizon").get<size_t>();
    generated = meta.at("source").get<std::string>() == "generated";
    d.stats = stats_from_json(meta.at("statistics"));
    if (generated) starts = meta.at("start_indices").get<std::vector<int64_t>>();
  } catch (const DatasetIoError&) {
    throw;
  } catch (const json::exception& e) {
    throw DatasetIoError(Code::corrupt_header, std::string("bad meta.json: ") + e.what());
  }
  if (d.d_s < 1 || d.d_a < 1 || n_traj < 1 || horizon < 1)
    throw DatasetIoError(Code::corrupt_header, "invalid header values");
  if (int(d.stats.state_mean.size()) != d.d_s || int(d.stats.action_mean.size()) != d.d_a)
    throw DatasetIoError(Code::dimension_mismatch, "statistics dims do not match header");
  if (generated && starts.size() != n_traj)
    throw DatasetIoError(Code::corrupt_header, "start_indices length != n_traj");

  const size_t stride = size_t(d.d_s) + size_t(d.d_a) + 2;
  const size_t expected = n_traj * horizon * stride * sizeof(double);
  std::ifstream bf(dir / "data.bin", std::ios::binary | std::ios::ate);
  if (!bf) throw DatasetIoError(Code::truncated_payload, "missing data.bin in " + dir.string());
  const size_t actual = size_t(bf.tellg());
  if (actual < expected)
    throw DatasetIoError(Code::truncated_payload,
                         "data.bin holds " + std::to_string(actual) + " bytes, expected " +
                             std::to_string(expected));
  if (actual != expected)
    throw DatasetIoError(Code::dimension_mismatch,
                         "data.bin size does not match declared shape (" + std::to_string(actual) +
                             " vs " + std::to_string(expected) + " bytes)");
  bf.seekg(0);
  std::vector<double> buf(n_traj * horizon * stride);
  bf.read(reinterpret_cast<char*>(buf.data()), std::streamsize(expected));
  if (!bf) throw DatasetIoError(Code::truncated_payload, "short read on data.bin");

  d.trajectories.resize(n_traj);
  size_t off = 0;
  for (size_t i = 0; i < n_traj; ++i) {
    Trajectory& tr = d.trajectories[i];
    tr.source = generated ? TrajectorySource::generated : TrajectorySource::collected;
    tr.steps.resize(horizon);
    int64_t t0 = generated ? starts[i] : 0;
    for (size_t j = 0; j < horizon; ++j) {
      Step& s = tr.steps[j];
      s.state.assign(buf.begin() + off, buf.begin() + off + d.d_s);
      off += d.d_s;
      s.action.assign(buf.begin() + off, buf.begin() + off + d.d_a);
      off += d.d_a;
      s.reward = buf[off++];
      double term = buf[off++];
      if (term != 0.0 && term != 1.0)
        throw DatasetIoError(Code::dimension_mismatch, "terminal flag must be 0.0 or 1.0");
      s.terminal = term == 1.0;
      s.t = t0 + int64_t(j);
    }
  }
  return d;
}

double augmentation_ratio(const OfflineDataset& original, const OfflineDataset& augmented) {
  size_t n = original.transition_count();
  if (n == 0) throw std::invalid_argument("augmentation_ratio: empty original dataset");
  return double(augmented.transition_count()) / double(n);
}

OfflineDataset mix_datasets(const OfflineDataset& original, const OfflineDataset& generated) {
  if (original.env_id != generated.env_id || original.d_s != generated.d_s ||
      original.d_a != generated.d_a)
    throw std::invalid_argument("mix_datasets: incompatible datasets");
  OfflineDataset mixed = original;
  mixed.trajectories.insert(mixed.trajectories.end(), generated.trajectories.begin(),
                            generated.trajectories.end());
  return mixed;
}

}  // namespace otto
