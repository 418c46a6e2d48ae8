#pragma once

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "irlin/datagen.hpp"
#include "irlin/mdp.hpp"
#include "irlin/trainer.hpp"
#include "irlin/trajectory.hpp"

namespace irlin {

using Json = nlohmann::ordered_json;

/// Provenance block attached to every file a command writes.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> flags;
  std::uint64_t seed = 0;
  std::string timestamp;
  std::string version = kVersion;
};

/// UTC timestamp; SOURCE_DATE_EPOCH overrides the clock for reproducible runs.
inline std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"))
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline Json to_json(const RunManifest& manifest) {
  Json flags = Json::object();
  for (const auto& [key, value] : manifest.flags) flags[key] = value;
  return Json{{"command", manifest.command},
              {"flags", flags},
              {"seed", manifest.seed},
              {"timestamp", manifest.timestamp},
              {"version", manifest.version}};
}

namespace detail {

inline std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << content;
  if (!out) throw ValidationError("write failed for " + path.string());
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) fields.push_back(field);
  if (!line.empty() && line.back() == sep) fields.push_back("");
  return fields;
}

}  // namespace detail

inline std::string feature_kind_name(FeatureKind kind) {
  return kind == FeatureKind::Boolean ? "boolean" : "real";
}

inline FeatureKind feature_kind_from(const std::string& name) {
  if (name == "boolean") return FeatureKind::Boolean;
  if (name == "real") return FeatureKind::Real;
  throw ValidationError("unknown feature kind '" + name + "'");
}

/// Writes `dir/network.csv` (header from,to,<feature names>; one row per
/// directed transition) and `dir/manifest.json` (feature schema, state
/// count, optional grid block, run provenance). Deterministic kernels only.
inline void write_network(const std::filesystem::path& dir, const Mdp& mdp,
                          const RunManifest& manifest,
                          const GridNetwork* grid = nullptr) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "from,to";
  for (const FeatureSpec& f : mdp.schema().features) csv << "," << f.name;
  csv << "\n";
  for (StateId s = 0; s < mdp.n_states(); ++s) {
    for (const Action& action : mdp.actions(s)) {
      if (action.successors.size() != 1 || action.successors[0].prob != 1.0)
        throw ValidationError("network CSV stores deterministic kernels only");
      const Successor& succ = action.successors[0];
      csv << s << "," << succ.state;
      const auto f = mdp.transitions().features(succ.pair_index);
      for (int t = 0; t < mdp.n_features(); ++t)
        csv << "," << detail::format_double(f[t]);
      csv << "\n";
    }
  }
  detail::write_text_file(dir / "network.csv", csv.str());

  Json doc;
  doc["schema_version"] = 1;
  doc["n_states"] = mdp.n_states();
  Json features = Json::array();
  for (const FeatureSpec& f : mdp.schema().features)
    features.push_back(Json{{"name", f.name}, {"kind", feature_kind_name(f.kind)}});
  doc["features"] = features;
  if (grid) {
    Json links = Json::array();
    for (const auto& link : grid->links)
      links.push_back(Json::array({link.from_node, link.to_node, link.travel_time}));
    doc["grid"] = Json{{"rows", grid->rows}, {"cols", grid->cols}, {"links", links}};
  }
  doc["run"] = to_json(manifest);
  detail::write_text_file(dir / "manifest.json", doc.dump(2) + "\n");
}

struct NetworkFile {
  Mdp mdp;  // no destination groups
  std::optional<GridNetwork> grid;
  Json manifest;
};

inline NetworkFile read_network(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream manifest_in(manifest_path);
  if (!manifest_in) throw ValidationError("cannot read " + manifest_path.string());
  Json doc;
  try {
    manifest_in >> doc;
  } catch (const std::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  FeatureSchema schema;
  for (const Json& f : doc.at("features"))
    schema.features.push_back(
        {f.at("name").get<std::string>(), feature_kind_from(f.at("kind").get<std::string>())});
  const int n_states = doc.at("n_states").get<int>();

  const auto csv_path = dir / "network.csv";
  std::ifstream csv(csv_path);
  if (!csv) throw ValidationError("cannot read " + csv_path.string());
  std::string line;
  if (!std::getline(csv, line))
    throw ValidationError(csv_path.string() + ": empty file");
  {
    std::vector<std::string> header = detail::split(line, ',');
    std::vector<std::string> expected = {"from", "to"};
    for (const FeatureSpec& f : schema.features) expected.push_back(f.name);
    if (header != expected)
      throw ValidationError(csv_path.string() +
                            ": header does not match the manifest feature schema");
  }

  MdpBuilder builder(n_states, schema);
  std::map<std::pair<StateId, StateId>, std::vector<double>> seen_features;
  int line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = detail::split(line, ',');
    if (static_cast<int>(fields.size()) != 2 + schema.size())
      throw ValidationError(csv_path.string() + ":" + std::to_string(line_no) +
                            ": expected " + std::to_string(2 + schema.size()) + " fields");
    try {
      const StateId from = static_cast<StateId>(std::stol(fields[0]));
      const StateId to = static_cast<StateId>(std::stol(fields[1]));
      std::vector<double> values(schema.size());
      for (int t = 0; t < schema.size(); ++t) {
        std::size_t pos = 0;
        values[t] = std::stod(fields[2 + t], &pos);
        if (pos != fields[2 + t].size()) throw std::invalid_argument("trailing characters");
      }
      builder.add_action(from, {{to, 1.0}});
      const auto key = std::make_pair(from, to);
      const auto it = seen_features.find(key);
      if (it == seen_features.end()) {
        builder.set_features(from, to, values);
        seen_features.emplace(key, std::move(values));
      } else if (it->second != values) {
        throw std::invalid_argument("conflicting features for a repeated (from,to) pair");
      }
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ValidationError(csv_path.string() + ":" + std::to_string(line_no) + ": " +
                            e.what());
    }
  }

  NetworkFile out{builder.build(), std::nullopt, std::move(doc)};
  if (out.manifest.contains("grid")) {
    GridNetwork grid;
    const Json& g = out.manifest["grid"];
    grid.rows = g.at("rows").get<int>();
    grid.cols = g.at("cols").get<int>();
    for (const Json& link : g.at("links"))
      grid.links.push_back(
          {link.at(0).get<int>(), link.at(1).get<int>(), link.at(2).get<double>()});
    out.grid = std::move(grid);
  }
  return out;
}

/// Trajectories as JSON Lines, one per line:
/// {"origin":o,"dest":d,"segments":[{"obs":[[s,a],...]} | {"gap":[u,v]}]}
inline void write_trajectories(const std::filesystem::path& path, const Dataset& dataset) {
  std::ostringstream out;
  for (const Trajectory& traj : dataset) {
    Json segments = Json::array();
    for (const Segment& seg : traj.segments) {
      if (const auto* run = std::get_if<ObservedRun>(&seg)) {
        Json obs = Json::array();
        for (const ObservedStep& step : run->steps)
          obs.push_back(Json::array({step.state, step.action}));
        segments.push_back(Json{{"obs", obs}});
      } else {
        const Gap& gap = std::get<Gap>(seg);
        segments.push_back(Json{{"gap", Json::array({gap.from, gap.to})}});
      }
    }
    out << Json{{"origin", traj.origin}, {"dest", traj.dest}, {"segments", segments}}.dump()
        << "\n";
  }
  detail::write_text_file(path, out.str());
}

inline Dataset read_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  Dataset dataset;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json doc = Json::parse(line);
      Trajectory traj;
      traj.origin = doc.at("origin").get<StateId>();
      traj.dest = doc.at("dest").get<StateId>();
      for (const Json& seg : doc.at("segments")) {
        if (seg.contains("obs")) {
          ObservedRun run;
          for (const Json& step : seg["obs"])
            run.steps.push_back({step.at(0).get<StateId>(), step.at(1).get<ActionId>()});
          traj.segments.emplace_back(std::move(run));
        } else if (seg.contains("gap")) {
          traj.segments.emplace_back(
              Gap{seg["gap"].at(0).get<StateId>(), seg["gap"].at(1).get<StateId>()});
        } else {
          throw std::invalid_argument("segment is neither \"obs\" nor \"gap\"");
        }
      }
      dataset.push_back(std::move(traj));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return dataset;
}

inline void write_sidecar_manifest(const std::filesystem::path& data_path,
                                   const RunManifest& manifest) {
  Json doc;
  doc["schema_version"] = 1;
  doc["data_file"] = data_path.filename().string();
  doc["run"] = to_json(manifest);
  detail::write_text_file(data_path.string() + ".manifest.json", doc.dump(2) + "\n");
}

inline Json to_json(const TrainReport& report) {
  Json trace = Json::array();
  for (const TrainIterRecord& p : report.trace)
    trace.push_back(Json{{"iter", p.iter},
                         {"loglik", p.loglik},
                         {"grad_inf", p.grad_inf},
                         {"step", p.step}});
  return Json{{"schema_version", 1},
              {"mode", report.mode},
              {"theta_hat", std::vector<double>(report.theta_hat.data(),
                                                report.theta_hat.data() + report.theta_hat.size())},
              {"iterations", report.iterations},
              {"evals", report.evals},
              {"final_loglik", report.final_loglik},
              {"converged", report.converged},
              {"line_search_failed", report.line_search_failed},
              {"excluded", report.excluded},
              {"em_outer_iterations", report.em_outer_iterations},
              {"seconds_total", report.seconds_total},
              {"seconds_per_eval", report.seconds_per_eval},
              {"seconds_factorize", report.seconds_factorize},
              {"warnings", report.warnings},
              {"trace", trace}};
}

inline void write_train_report(const std::filesystem::path& path, const TrainReport& report,
                               const RunManifest& manifest) {
  Json doc = to_json(report);
  doc["run"] = to_json(manifest);
  detail::write_text_file(path, doc.dump(2) + "\n");
}

inline Theta read_theta_from_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  Json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  const std::vector<double> values = doc.at("theta_hat").get<std::vector<double>>();
  return Eigen::Map<const Theta>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace irlin
