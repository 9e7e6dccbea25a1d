#include "afcl/task_stream.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "afcl/rng.hpp"

namespace afcl {

using nlohmann::json;

std::string to_string(StreamMode m) {
  switch (m) {
    case StreamMode::iid_sphere: return "iid-sphere";
    case StreamMode::p_recurring: return "p-recurring";
    case StreamMode::lgm: return "lgm";
    case StreamMode::explicit_tasks: return "explicit";
  }
  throw std::logic_error("unreachable stream mode");
}

StreamMode stream_mode_from_string(const std::string& s) {
  if (s == "iid-sphere") return StreamMode::iid_sphere;
  if (s == "p-recurring") return StreamMode::p_recurring;
  if (s == "lgm") return StreamMode::lgm;
  if (s == "explicit") return StreamMode::explicit_tasks;
  throw error("unknown stream mode '" + s + "'");
}

namespace {

const Eigen::MatrixXd& pick(const std::vector<Eigen::MatrixXd>& list, int i,
                            const char* what) {
  if (list.empty()) throw invalid_model_error(std::string("LgmModel: no ") + what + " matrices");
  if (list.size() == 1) return list.front();
  if (i < 1 || static_cast<std::size_t>(i) > list.size())
    throw invalid_model_error(std::string("LgmModel: task index ") + std::to_string(i) +
                              " out of range for " + what);
  return list[static_cast<std::size_t>(i) - 1];
}

void check_cov(const Eigen::MatrixXd& M, const char* what, bool require_pd) {
  if (M.rows() != M.cols())
    throw invalid_model_error(std::string("LgmModel: ") + what + " is not square");
  const double asym = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12)
    throw invalid_model_error(std::string("LgmModel: ") + what + " is asymmetric by " +
                              std::to_string(asym));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (lo < -1e-10 * scale)
    throw invalid_model_error(std::string("LgmModel: ") + what +
                              " has negative eigenvalue " + std::to_string(lo));
  if (require_pd && lo <= 0.0)
    throw invalid_model_error(std::string("LgmModel: ") + what +
                              " is not positive definite (min eigenvalue " +
                              std::to_string(lo) + ")");
}

}  // namespace

const Eigen::MatrixXd& LgmModel::transition(int i) const { return pick(A, i, "transition"); }
const Eigen::MatrixXd& LgmModel::measurement(int i) const { return pick(X, i, "measurement"); }
const Eigen::MatrixXd& LgmModel::process_cov(int i) const { return pick(Q, i, "process-noise"); }
const Eigen::MatrixXd& LgmModel::obs_cov(int i) const { return pick(R, i, "observation-noise"); }

void LgmModel::validate(bool require_pd) const {
  const int d = dim();
  if (d <= 0) throw invalid_model_error("LgmModel: empty prior mean");
  if (Sigma1.rows() != d || Sigma1.cols() != d)
    throw invalid_model_error("LgmModel: Sigma1 does not match the state dimension");
  check_cov(Sigma1, "Sigma1", require_pd);
  if (X.empty()) throw invalid_model_error("LgmModel: no measurement matrices");
  const int m = obs_dim();
  for (const auto& Ai : A)
    if (Ai.rows() != d || Ai.cols() != d)
      throw invalid_model_error("LgmModel: transition matrix is not d-by-d");
  for (const auto& Xi : X)
    if (Xi.rows() != d || Xi.cols() != m)
      throw invalid_model_error("LgmModel: measurement matrices disagree in shape");
  for (const auto& Qi : Q) {
    if (Qi.rows() != d) throw invalid_model_error("LgmModel: process-noise matrix is not d-by-d");
    check_cov(Qi, "Q", require_pd);
  }
  for (const auto& Ri : R) {
    if (Ri.rows() != m) throw invalid_model_error("LgmModel: observation-noise matrix is not m-by-m");
    check_cov(Ri, "R", require_pd);
  }
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw invalid_model_error("psd_sqrt: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10 * scale)
      throw invalid_model_error("psd_sqrt: matrix has negative eigenvalue " +
                                std::to_string(ev[i]));
    ev[i] = ev[i] > 0.0 ? std::sqrt(ev[i]) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd TaskStream::input_prefix(std::size_t t) const {
  if (t > scalar_tasks.size()) throw std::out_of_range("input_prefix: t exceeds stream length");
  Eigen::MatrixXd X(dim, static_cast<Eigen::Index>(t));
  for (std::size_t k = 0; k < t; ++k) X.col(static_cast<Eigen::Index>(k)) = scalar_tasks[k].x;
  return X;
}

Eigen::VectorXd TaskStream::target_prefix(std::size_t t) const {
  if (t > scalar_tasks.size()) throw std::out_of_range("target_prefix: t exceeds stream length");
  Eigen::VectorXd y(static_cast<Eigen::Index>(t));
  for (std::size_t k = 0; k < t; ++k) y[static_cast<Eigen::Index>(k)] = scalar_tasks[k].y;
  return y;
}

TaskStream generate_iid_sphere(int d, int T, const Eigen::VectorXd& theta_star,
                               std::uint64_t seed) {
  if (d <= 0) throw std::invalid_argument("generate_iid_sphere: d must be positive");
  if (T <= 0) throw std::invalid_argument("generate_iid_sphere: T must be positive");
  if (theta_star.size() != d)
    throw std::invalid_argument("generate_iid_sphere: theta_star does not have length d");
  Rng rng(seed);
  TaskStream s;
  s.mode = StreamMode::iid_sphere;
  s.seed = seed;
  s.dim = d;
  s.theta_star = theta_star;
  s.scalar_tasks.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    ScalarTask task;
    task.x = rng.unit_sphere(d);
    task.y = task.x.dot(theta_star);
    s.scalar_tasks.push_back(std::move(task));
  }
  return s;
}

TaskStream generate_recurring(const std::vector<ScalarTask>& base_tasks, int T,
                              std::optional<Eigen::VectorXd> theta_star) {
  if (base_tasks.empty()) throw std::invalid_argument("generate_recurring: empty base");
  if (T <= 0) throw std::invalid_argument("generate_recurring: T must be positive");
  const Eigen::Index d = base_tasks.front().x.size();
  for (const auto& task : base_tasks)
    if (task.x.size() != d)
      throw std::invalid_argument("generate_recurring: base tasks disagree in dimension");
  TaskStream s;
  s.mode = StreamMode::p_recurring;
  s.dim = static_cast<int>(d);
  s.theta_star = std::move(theta_star);
  s.scalar_tasks.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    s.scalar_tasks.push_back(base_tasks[static_cast<std::size_t>(t) % base_tasks.size()]);
  return s;
}

TaskStream make_explicit(std::vector<ScalarTask> tasks,
                         std::optional<Eigen::VectorXd> theta_star) {
  if (tasks.empty()) throw std::invalid_argument("make_explicit: empty task list");
  TaskStream s;
  s.mode = StreamMode::explicit_tasks;
  s.dim = static_cast<int>(tasks.front().x.size());
  s.theta_star = std::move(theta_star);
  s.scalar_tasks = std::move(tasks);
  return s;
}

TaskStream sample_lgm(const LgmModel& model, int T, std::uint64_t seed) {
  model.validate();
  if (T <= 0) throw std::invalid_argument("sample_lgm: T must be positive");
  const int d = model.dim();
  const int m = model.obs_dim();
  Rng rng(seed);
  TaskStream s;
  s.mode = StreamMode::lgm;
  s.seed = seed;
  s.dim = d;
  // Draw order is fixed for replay: prior noise, then per task the process
  // noise (from task 2 on) followed by the measurement noise.
  Eigen::VectorXd theta = model.mu1 + psd_sqrt(model.Sigma1) * rng.gaussian(d);
  for (int i = 1; i <= T; ++i) {
    if (i >= 2)
      theta = model.transition(i) * theta + psd_sqrt(model.process_cov(i)) * rng.gaussian(d);
    BlockTask task;
    task.X = model.measurement(i);
    task.y = task.X.transpose() * theta + psd_sqrt(model.obs_cov(i)) * rng.gaussian(m);
    s.trajectory.push_back(theta);
    s.block_tasks.push_back(std::move(task));
  }
  return s;
}

Eigen::VectorXd min_norm_solution(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (y.size() != X.cols())
    throw std::invalid_argument("min_norm_solution: y length does not match task count");
  if (X.cols() == 0) return Eigen::VectorXd::Zero(X.rows());
  if (X.cols() > X.rows())
    throw std::invalid_argument("min_norm_solution: more tasks than dimensions");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double smax = sv[0];
  const double smin = sv[sv.size() - 1];
  if (smax <= 0.0 || smin < kRankTol * smax) {
    std::ostringstream msg;
    msg << "min_norm_solution: rank-deficient inputs (singular value " << smin
        << " against largest " << smax << ")";
    throw rank_deficiency_error(msg.str(), smin);
  }
  return svd.matrixU() * (sv.cwiseInverse().asDiagonal() * (svd.matrixV().transpose() * y));
}

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  Eigen::Index i = 0;
  for (const auto& e : a) v[i++] = e.get<double>();
  return v;
}

}  // namespace

std::string to_jsonl(const TaskStream& stream) {
  std::ostringstream out;
  json header;
  header["mode"] = to_string(stream.mode);
  header["seed"] = stream.seed;
  header["d"] = stream.dim;
  if (stream.theta_star) header["theta_star"] = vec_to_json(*stream.theta_star);
  if (!stream.trajectory.empty()) {
    json traj = json::array();
    for (const auto& th : stream.trajectory) traj.push_back(vec_to_json(th));
    header["trajectory"] = traj;
  }
  out << header.dump() << '\n';
  if (stream.is_block()) {
    for (std::size_t t = 0; t < stream.block_tasks.size(); ++t) {
      const BlockTask& task = stream.block_tasks[t];
      json rec;
      rec["t"] = t + 1;
      json cols = json::array();
      for (Eigen::Index c = 0; c < task.X.cols(); ++c) cols.push_back(vec_to_json(task.X.col(c)));
      rec["x"] = cols;
      rec["y"] = vec_to_json(task.y);
      out << rec.dump() << '\n';
    }
  } else {
    for (std::size_t t = 0; t < stream.scalar_tasks.size(); ++t) {
      const ScalarTask& task = stream.scalar_tasks[t];
      json rec;
      rec["t"] = t + 1;
      rec["x"] = vec_to_json(task.x);
      rec["y"] = task.y;
      out << rec.dump() << '\n';
    }
  }
  return out.str();
}

void write_jsonl(const TaskStream& stream, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("write_jsonl: cannot open '" + path + "'");
  out << to_jsonl(stream);
  if (!out) throw error("write_jsonl: write to '" + path + "' failed");
}

TaskStream read_jsonl(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  TaskStream s;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw error("read_jsonl: line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!have_header) {
      if (!rec.contains("mode") || !rec.contains("seed") || !rec.contains("d"))
        throw error("read_jsonl: line " + std::to_string(lineno) +
                    ": header must carry mode, seed and d");
      s.mode = stream_mode_from_string(rec["mode"].get<std::string>());
      s.seed = rec["seed"].get<std::uint64_t>();
      s.dim = rec["d"].get<int>();
      if (s.dim <= 0)
        throw error("read_jsonl: line " + std::to_string(lineno) + ": d must be positive");
      if (rec.contains("theta_star")) s.theta_star = vec_from_json(rec["theta_star"]);
      if (rec.contains("trajectory"))
        for (const auto& th : rec["trajectory"]) s.trajectory.push_back(vec_from_json(th));
      have_header = true;
      continue;
    }
    if (!rec.contains("t") || !rec.contains("x") || !rec.contains("y"))
      throw error("read_jsonl: line " + std::to_string(lineno) +
                  ": task record must carry t, x and y");
    const std::size_t expected = s.size() + 1;
    if (rec["t"].get<std::size_t>() != expected)
      throw error("read_jsonl: line " + std::to_string(lineno) + ": task index " +
                  rec["t"].dump() + " is out of order (expected " +
                  std::to_string(expected) + ")");
    const json& jx = rec["x"];
    if (!jx.is_array() || jx.empty())
      throw error("read_jsonl: line " + std::to_string(lineno) + ": x must be a non-empty array");
    if (jx.front().is_array()) {
      BlockTask task;
      task.X.resize(s.dim, static_cast<Eigen::Index>(jx.size()));
      Eigen::Index c = 0;
      for (const auto& col : jx) {
        Eigen::VectorXd v = vec_from_json(col);
        if (v.size() != s.dim)
          throw error("read_jsonl: line " + std::to_string(lineno) +
                      ": input column does not have length d");
        task.X.col(c++) = v;
      }
      task.y = vec_from_json(rec["y"]);
      if (task.y.size() != task.X.cols())
        throw error("read_jsonl: line " + std::to_string(lineno) +
                    ": y length does not match the sample count");
      s.block_tasks.push_back(std::move(task));
    } else {
      ScalarTask task;
      task.x = vec_from_json(jx);
      if (task.x.size() != s.dim)
        throw error("read_jsonl: line " + std::to_string(lineno) + ": x does not have length d");
      task.y = rec["y"].get<double>();
      s.scalar_tasks.push_back(std::move(task));
    }
  }
  if (!have_header) throw error("read_jsonl: empty input");
  return s;
}

TaskStream read_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("read_jsonl_file: cannot open '" + path + "'");
  return read_jsonl(in);
}

}  // namespace afcl
