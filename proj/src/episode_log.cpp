#include "bronchonav/episode_log.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace bronchonav {

using Json = nlohmann::ordered_json;

std::vector<std::pair<AirwayId, ObservationRow>> sparse_rows(const ObservationMatrix& obs, int airway_count) {
  std::vector<std::pair<AirwayId, ObservationRow>> out;
  const int n = std::min(airway_count, obs.size());
  for (AirwayId id = 0; id < n; ++id) {
    const ObservationRow& r = obs.rows[id];
    if (r.p_is_vis > 0.0 || r.p_has_vis_child > 0.0) out.emplace_back(id, r);
  }
  return out;
}

std::vector<double> frame_scores(const FrameRecord& frame, int airway_count) {
  std::vector<double> scores(airway_count, 0.0);
  auto put = [&](AirwayId id, double s) {
    if (id >= 0 && id < airway_count) scores[id] = std::max(scores[id], s);
  };
  if (frame.labeled) {
    for (const auto& [id, row] : frame.rows) put(id, row.p_is_vis);
    return scores;
  }
  if (!frame.assigned) return scores;
  const Assignment& a = *frame.assigned;
  const auto& rows = frame.unlabeled_rows;
  if (a.parent_row >= 0 && a.parent_row < static_cast<int>(rows.size())) put(a.parent, rows[a.parent_row].p_is_vis);
  for (std::size_t k = 0; k < a.children.size() && k < a.child_rows.size(); ++k) {
    const int r = a.child_rows[k];
    if (r >= 0 && r < static_cast<int>(rows.size())) put(a.children[k], rows[r].p_is_vis);
  }
  return scores;
}

namespace {

Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json pose_json(const Pose& p) {
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r) rot.push_back(vec_json(p.rotation.row(r).transpose()));
  return Json{{"position", vec_json(p.position)}, {"rotation", rot}};
}

Json row_json(const ObservationRow& r) {
  return Json{{"p_is_vis", r.p_is_vis},
              {"p_has_vis_child", r.p_has_vis_child},
              {"y_p", vec_json(r.y_p)},
              {"y_d", vec_json(r.y_d)}};
}

Json command_json(const Command& c) {
  return Json{{"du_tendons", vec_json(c.du_tendons)}, {"du_ins", c.du_ins}, {"mode", mode_name(c.mode)}, {"aim", c.aim}};
}

// Reading helpers; `where` names the record for error messages.
const Json& field(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw Error(where + ": missing field \"" + key + "\"");
  return obj.at(key);
}

double num(const Json& j, const std::string& where) {
  if (!j.is_number()) throw Error(where + ": expected a number");
  return j.get<double>();
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != N) throw Error(where + ": expected an array of " + std::to_string(N));
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = num(j[i], where);
  return v;
}

std::vector<AirwayId> ids(const Json& j, const std::string& where) {
  if (!j.is_array()) throw Error(where + ": expected an array");
  std::vector<AirwayId> out;
  for (const auto& e : j) {
    if (!e.is_number_integer()) throw Error(where + ": expected integer IDs");
    out.push_back(e.get<AirwayId>());
  }
  return out;
}

Pose parse_pose(const Json& j, const std::string& where) {
  Pose p;
  p.position = vec<3>(field(j, "position", where), where + ".position");
  const Json& rot = field(j, "rotation", where);
  if (!rot.is_array() || rot.size() != 3) throw Error(where + ".rotation: expected 3 rows");
  for (int r = 0; r < 3; ++r) p.rotation.row(r) = vec<3>(rot[r], where + ".rotation").transpose();
  return p;
}

ObservationRow parse_row(const Json& j, const std::string& where) {
  ObservationRow r;
  r.p_is_vis = num(field(j, "p_is_vis", where), where + ".p_is_vis");
  r.p_has_vis_child = num(field(j, "p_has_vis_child", where), where + ".p_has_vis_child");
  r.y_p = vec<3>(field(j, "y_p", where), where + ".y_p");
  r.y_d = vec<2>(field(j, "y_d", where), where + ".y_d");
  return r;
}

Json frame_json(const FrameRecord& f) {
  Json j;
  j["kind"] = "frame";
  j["t"] = f.t;
  j["true_pose"] = pose_json(f.true_state.pose);
  j["u_ins"] = f.true_state.u_ins;
  j["roll"] = f.true_state.roll;
  j["tendons"] = vec_json(f.true_state.tendons);
  if (f.labeled) {
    Json rows = Json::array();
    for (const auto& [id, r] : f.rows) {
      Json e{{"id", id}};
      e.update(row_json(r));
      rows.push_back(std::move(e));
    }
    j["rows"] = std::move(rows);
  } else {
    Json rows = Json::array();
    for (const auto& r : f.unlabeled_rows) rows.push_back(row_json(r));
    j["unlabeled_rows"] = std::move(rows);
  }
  j["truth"] = Json{{"visible", f.truth_visible},
                    {"has_vis_child", f.truth_has_vis_child},
                    {"bifurcation", f.truth_bifurcation ? Json(*f.truth_bifurcation) : Json(nullptr)}};
  j["estimate"] = f.estimate ? pose_json(*f.estimate) : Json(nullptr);
  if (f.assigned) {
    j["assigned"] = Json{{"parent", f.assigned->parent},
                         {"children", f.assigned->children},
                         {"parent_row", f.assigned->parent_row},
                         {"child_rows", f.assigned->child_rows}};
  } else {
    j["assigned"] = nullptr;
  }
  j["command"] = f.command ? command_json(*f.command) : Json(nullptr);
  return j;
}

FrameRecord parse_frame(const Json& j, const std::string& where) {
  FrameRecord f;
  f.t = num(field(j, "t", where), where + ".t");
  f.true_state.pose = parse_pose(field(j, "true_pose", where), where + ".true_pose");
  f.true_state.u_ins = num(field(j, "u_ins", where), where + ".u_ins");
  f.true_state.roll = num(field(j, "roll", where), where + ".roll");
  f.true_state.tendons = vec<4>(field(j, "tendons", where), where + ".tendons");
  if (j.contains("rows")) {
    f.labeled = true;
    const Json& rows = j.at("rows");
    if (!rows.is_array()) throw Error(where + ".rows: expected an array");
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::string w = where + ".rows[" + std::to_string(k) + "]";
      const Json& id = field(rows[k], "id", w);
      if (!id.is_number_integer()) throw Error(w + ".id: expected an integer");
      f.rows.emplace_back(id.get<AirwayId>(), parse_row(rows[k], w));
    }
  } else {
    f.labeled = false;
    const Json& rows = field(j, "unlabeled_rows", where);
    if (!rows.is_array()) throw Error(where + ".unlabeled_rows: expected an array");
    for (std::size_t k = 0; k < rows.size(); ++k) {
      f.unlabeled_rows.push_back(parse_row(rows[k], where + ".unlabeled_rows[" + std::to_string(k) + "]"));
    }
  }
  const Json& truth = field(j, "truth", where);
  f.truth_visible = ids(field(truth, "visible", where + ".truth"), where + ".truth.visible");
  f.truth_has_vis_child = ids(field(truth, "has_vis_child", where + ".truth"), where + ".truth.has_vis_child");
  const Json& bif = field(truth, "bifurcation", where + ".truth");
  if (!bif.is_null()) f.truth_bifurcation = bif.get<AirwayId>();
  const Json& est = field(j, "estimate", where);
  if (!est.is_null()) f.estimate = parse_pose(est, where + ".estimate");
  const Json& as = field(j, "assigned", where);
  if (!as.is_null()) {
    Assignment a;
    a.parent = field(as, "parent", where + ".assigned").get<AirwayId>();
    a.children = ids(field(as, "children", where + ".assigned"), where + ".assigned.children");
    a.parent_row = field(as, "parent_row", where + ".assigned").get<int>();
    a.child_rows = ids(field(as, "child_rows", where + ".assigned"), where + ".assigned.child_rows");
    f.assigned = std::move(a);
  }
  const Json& cmd = field(j, "command", where);
  if (!cmd.is_null()) {
    Command c;
    c.du_tendons = vec<4>(field(cmd, "du_tendons", where + ".command"), where + ".command.du_tendons");
    c.du_ins = num(field(cmd, "du_ins", where + ".command"), where + ".command.du_ins");
    const std::string mode = field(cmd, "mode", where + ".command").get<std::string>();
    if (mode == "FOLLOW") c.mode = Mode::kFollow;
    else if (mode == "RECOVER") c.mode = Mode::kRecover;
    else throw Error(where + ".command.mode: unknown mode \"" + mode + "\"");
    c.aim = field(cmd, "aim", where + ".command").get<AirwayId>();
    f.command = c;
  }
  return f;
}

}  // namespace

std::string episode_to_jsonl(const EpisodeLog& log) {
  std::string out;
  Json header;
  header["kind"] = "header";
  header["episode"] = log.kind;
  header["tree_hash"] = log.tree_hash;
  header["airway_count"] = log.airway_count;
  header["seed"] = log.seed;
  header["config"] = Json::parse(log.config_json);
  out += header.dump();
  out += '\n';
  for (const FrameRecord& f : log.frames) {
    out += frame_json(f).dump();
    out += '\n';
  }
  Json outcome{{"kind", "outcome"},
               {"success", log.outcome.success},
               {"completion_time", log.outcome.completion_time},
               {"recoveries", log.outcome.recoveries},
               {"collisions", log.outcome.collisions}};
  out += outcome.dump();
  out += '\n';
  return out;
}

EpisodeLog episode_from_jsonl(const std::string& text) {
  EpisodeLog log;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_header = false;
  bool have_outcome = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(where + ": " + e.what());
    }
    const std::string kind = field(j, "kind", where).get<std::string>();
    if (kind == "header") {
      log.kind = field(j, "episode", where).get<std::string>();
      log.tree_hash = field(j, "tree_hash", where).get<std::string>();
      log.airway_count = field(j, "airway_count", where).get<int>();
      log.seed = field(j, "seed", where).get<std::uint64_t>();
      log.config_json = field(j, "config", where).dump();
      have_header = true;
    } else if (kind == "frame") {
      if (!have_header) throw Error(where + ": frame before header");
      log.frames.push_back(parse_frame(j, where));
    } else if (kind == "outcome") {
      log.outcome.success = field(j, "success", where).get<bool>();
      log.outcome.completion_time = num(field(j, "completion_time", where), where);
      log.outcome.recoveries = field(j, "recoveries", where).get<int>();
      log.outcome.collisions = field(j, "collisions", where).get<int>();
      have_outcome = true;
    } else {
      throw Error(where + ": unknown record kind \"" + kind + "\"");
    }
  }
  if (!have_header) throw Error("episode log: missing header record");
  if (!have_outcome) throw Error("episode log: missing outcome record");
  return log;
}

void write_episode(const EpisodeLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << episode_to_jsonl(log);
  if (!out) throw Error("failed writing " + path.string());
}

EpisodeLog read_episode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return episode_from_jsonl(ss.str());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void verify_tree_hash(const EpisodeLog& log, const AirwayTree& tree) {
  const std::string h = tree_hash(tree);
  if (h != log.tree_hash) throw Error("episode log tree hash " + log.tree_hash + " does not match tree " + h);
}

}  // namespace bronchonav
