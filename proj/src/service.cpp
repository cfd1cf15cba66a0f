#include "gproc/service.hpp"

#include "gproc/grammar.hpp"
#include "gproc/guidance.hpp"
#include "gproc/model_io.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <atomic>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace gproc {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

ojson error_json(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

namespace {

std::string now_iso() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

ojson theta_json(const ParamVector& p) {
  ojson j;
  const auto a = p.to_array();
  for (int i = 0; i < ParamVector::kDims; ++i) j[std::string(ParamVector::names()[i])] = a[i];
  return j;
}

ParamVector theta_from(const ojson& j, ParamVector base, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path, "expected an object");
  auto a = base.to_array();
  for (const auto& [k, v] : j.items()) {
    const int i = ParamVector::index_of(k);
    if (i < 0) throw ValidationError(path + "/" + k, "unknown parameter");
    if (!v.is_number()) throw ValidationError(path + "/" + k, "expected a number");
    a[i] = v.get<double>();
  }
  return ParamVector::from_array(a);
}

ojson gamma_json(const GrammarValues& g) {
  return {{"alp", g.alp}, {"non", g.non}, {"fan", g.fan}, {"rep", g.rep}};
}

ojson phi_json(double phi) { return std::isfinite(phi) ? ojson(phi) : ojson(nullptr); }

ojson trace_row_json(const TraceRow& r) {
  return {{"iteration", r.iteration}, {"evaluation", r.evaluation}, {"phi", phi_json(r.phi)},
          {"accepted", r.accepted},   {"gamma", gamma_json(r.gamma)},  {"theta", theta_json(r.theta)}};
}

bool terminal(const std::string& status) {
  return status == "converged" || status == "budget-exhausted" || status == "cancelled" || status == "failed";
}

FileFormat upload_format(const std::string& filename) {
  const FileFormat f = format_from_path(filename);
  if (f == FileFormat::Auto) {
    throw ServiceError(400, "unsupported-format", "model file must end in .obj, .ply or .xyz: '" + filename + "'");
  }
  return f;
}

const char* extension(FileFormat f) {
  switch (f) {
    case FileFormat::Obj: return ".obj";
    case FileFormat::Ply: return ".ply";
    case FileFormat::Xyz: return ".xyz";
    default: return "";
  }
}

ServiceError not_found(const std::string& what, const std::string& id) {
  return ServiceError(404, what + "-not-found", "no " + what + " '" + id + "'");
}

/// ValidationError -> 400 with the JSON path in the message.
template <typename Fn>
auto validated(Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ServiceError(400, "invalid-request", e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Service
// ---------------------------------------------------------------------------

struct Service::Impl {
  ServiceOptions options;
  fs::path indexPath;
  mutable std::mutex mutex;  // guards index, queue, flags
  mutable std::condition_variable queueCv;
  mutable std::condition_variable doneCv;
  ojson index;
  std::deque<std::string> queue;
  std::map<std::string, std::shared_ptr<std::atomic<bool>>> cancelFlags;
  std::vector<std::thread> workers;
  bool stopping = false;
  std::atomic<bool> stopFlag{false};

  mutable std::mutex modelMutex;
  mutable std::map<std::string, std::shared_ptr<const Model>> modelCache;

  explicit Impl(ServiceOptions o) : options(std::move(o)) {
    if (options.dataDir.empty()) throw Error("a data directory is required");
    fs::create_directories(options.dataDir / "models");
    fs::create_directories(options.dataDir / "grammars");
    indexPath = options.dataDir / "index.json";
    if (fs::exists(indexPath)) {
      try {
        index = ojson::parse(read_file(indexPath));
      } catch (const nlohmann::json::exception& e) {
        throw Error("corrupt index " + indexPath.string() + ": " + e.what());
      }
    } else {
      index = {{"version", 1}, {"nextJob", 1}, {"models", ojson::object()}, {"jobs", ojson::object()}};
      persist();
    }
    // Resume jobs a previous process did not finish.
    for (auto& [id, job] : index["jobs"].items()) {
      const std::string status = job["status"];
      if (status == "queued" || status == "running") {
        reset_job(job);
        queue.push_back(id);
      }
    }
    persist();
    const int n = options.workers > 0 ? options.workers : std::max(1u, std::thread::hardware_concurrency());
    for (int i = 0; i < n; ++i) workers.emplace_back([this] { work(); });
  }

  static void reset_job(ojson& job) {
    job["status"] = "queued";
    job["startedAt"] = nullptr;
    job["evaluations"] = 0;
    job["trace"] = ojson::array();
  }

  void persist() const { write_file_atomic(indexPath, index.dump(2) + "\n"); }

  ojson& job_ref(const std::string& id) {
    auto it = index["jobs"].find(id);
    if (it == index["jobs"].end()) throw not_found("job", id);
    return *it;
  }
  const ojson& job_ref(const std::string& id) const {
    const auto it = index["jobs"].find(id);
    if (it == index["jobs"].end()) throw not_found("job", id);
    return *it;
  }
  const ojson& model_ref(const std::string& id) const {
    const auto it = index["models"].find(id);
    if (it == index["models"].end()) throw not_found("model", id);
    return *it;
  }

  std::shared_ptr<const Model> load(const std::string& id) const {
    fs::path file;
    {
      std::lock_guard lock(mutex);
      file = options.dataDir / "models" / model_ref(id)["file"].get<std::string>();
    }
    std::lock_guard lock(modelMutex);
    auto& slot = modelCache[id];
    if (!slot) slot = std::make_shared<const Model>(load_model(file));
    return slot;
  }

  fs::path grammar_path(const std::string& jobId) const { return options.dataDir / "grammars" / (jobId + ".json"); }

  std::string next_job_id() {
    const int n = index["nextJob"].get<int>();
    index["nextJob"] = n + 1;
    std::ostringstream s;
    s << "job-" << std::setw(6) << std::setfill('0') << n;
    return s.str();
  }

  ojson new_job(const std::string& kind, const std::string& modelId, const TargetSpec& target, int budget,
                std::uint64_t seed) {
    ojson job;
    job["id"] = next_job_id();
    job["kind"] = kind;
    job["modelId"] = modelId;
    job["status"] = "queued";
    job["target"] = target.to_json();
    job["budget"] = budget;
    job["seed"] = seed;
    job["warmFrom"] = nullptr;
    job["theta"] = nullptr;
    job["createdAt"] = now_iso();
    job["startedAt"] = nullptr;
    job["finishedAt"] = nullptr;
    job["evaluations"] = 0;
    job["best"] = nullptr;
    job["converged"] = false;
    job["error"] = nullptr;
    job["trace"] = ojson::array();
    return job;
  }

  void work() {
    for (;;) {
      std::string id;
      std::shared_ptr<std::atomic<bool>> flag;
      ojson job;
      {
        std::unique_lock lock(mutex);
        queueCv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        auto& ref = job_ref(id);
        if (ref["status"] != "queued") continue;
        ref["status"] = "running";
        ref["startedAt"] = now_iso();
        flag = cancelFlags.try_emplace(id, std::make_shared<std::atomic<bool>>(false)).first->second;
        job = ref;
        persist();
      }
      run(id, job, *flag);
    }
  }

  void run(const std::string& id, const ojson& job, std::atomic<bool>& flag) {
    ojson result;
    std::string status;
    try {
      const auto model = load(job["modelId"]);
      const TargetSpec target = TargetSpec::from_json(job["target"]);
      GuidanceState state = GuidanceState::for_model(*model, job["seed"].get<std::uint64_t>());
      state.budget = job["budget"];
      if (!job["theta"].is_null()) {
        state.theta = state.bounds.clamp(theta_from(job["theta"], state.theta, "/theta"));
        state.warmStart = !job["warmFrom"].is_null();
      }
      state.cancel = [&] { return flag.load() || stopFlag.load(); };
      state.onEvaluate = [&](const TraceRow& row) {
        std::lock_guard lock(mutex);
        auto& ref = job_ref(id);
        ref["trace"].push_back(trace_row_json(row));
        ref["evaluations"] = row.evaluation;
      };
      GuidanceState out = optimize(*model, target, state);
      if (stopFlag.load() && !flag.load() && !out.converged) {
        std::lock_guard lock(mutex);
        reset_job(job_ref(id));
        persist();
        return;
      }
      save_grammar(grammar_path(id), *out.grammar);
      status = out.status();
      result["best"] = {{"theta", theta_json(out.theta)}, {"gamma", gamma_json(out.gamma)}, {"phi", phi_json(out.phi)}};
      result["converged"] = out.converged;
      result["evaluations"] = out.evaluations;
      ojson trace = ojson::array();
      for (const auto& r : out.trace) trace.push_back(trace_row_json(r));
      result["trace"] = std::move(trace);
    } catch (const std::exception& e) {
      status = "failed";
      result["error"] = e.what();
    }
    std::lock_guard lock(mutex);
    auto& ref = job_ref(id);
    for (const auto& [k, v] : result.items()) ref[k] = v;
    ref["status"] = status;
    ref["finishedAt"] = now_iso();
    persist();
    doneCv.notify_all();
  }

  ojson public_job(const ojson& job) const {
    ojson out = job;
    const std::string id = job["id"];
    out["links"] = {{"self", "/api/jobs/" + id},
                    {"grammar", "/api/jobs/" + id + "/grammar"},
                    {"preview", "/api/jobs/" + id + "/preview"}};
    return out;
  }

  void enqueue(ojson job) {
    const std::string id = job["id"];
    index["jobs"][id] = std::move(job);
    queue.push_back(id);
    persist();
    queueCv.notify_one();
  }

  std::string finished_grammar_text(const std::string& id) const {
    {
      std::lock_guard lock(mutex);
      const auto& job = job_ref(id);
      const std::string status = job["status"];
      if (!terminal(status) || job["best"].is_null()) {
        throw ServiceError(409, "not-finished", "job '" + id + "' has no grammar (status " + status + ")");
      }
    }
    return read_file(grammar_path(id));
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { shutdown(); }

void Service::shutdown() {
  {
    std::lock_guard lock(impl_->mutex);
    if (impl_->stopping) return;
    impl_->stopping = true;
    impl_->stopFlag = true;
  }
  impl_->queueCv.notify_all();
  for (auto& t : impl_->workers) t.join();
  impl_->workers.clear();
}

ojson Service::config() const {
  ojson j;
  j["version"] = 1;
  j["epsilon"] = TargetSpec{}.epsilon;
  j["budget"] = GuidanceState{}.budget;
  j["maxUploadBytes"] = impl_->options.maxUpload;
  j["gammaNames"] = GrammarValues::names();
  ojson names = ojson::array();
  for (const auto& n : ParamVector::names()) names.push_back(std::string(n));
  j["parameterNames"] = names;
  j["formats"] = {"obj", "ply", "xyz"};
  j["statuses"] = {"queued", "running", "converged", "budget-exhausted", "cancelled", "failed"};
  return j;
}

ojson Service::add_model(const std::string& bytes, const std::string& filename) {
  if (bytes.size() > impl_->options.maxUpload) {
    throw ServiceError(413, "payload-too-large", "upload exceeds " + std::to_string(impl_->options.maxUpload) + " bytes");
  }
  const FileFormat format = upload_format(filename);
  std::optional<Model> parsed;
  try {
    parsed = parse_model(bytes, format);
  } catch (const std::exception& e) {
    throw ServiceError(400, "invalid-model", e.what());
  }
  const std::string id = sha256_hex(bytes);
  const std::string file = id + extension(format);
  std::lock_guard lock(impl_->mutex);
  auto& models = impl_->index["models"];
  if (!models.contains(id)) {
    write_file_atomic(impl_->options.dataDir / "models" / file, bytes);
    const BoundingBox box = parsed->bbox();
    models[id] = {{"id", id},
                  {"file", file},
                  {"filename", fs::path(filename).filename().string()},
                  {"dataType", parsed->is_mesh() ? "mesh" : "pointcloud"},
                  {"elements", parsed->size()},
                  {"bbox", {{"min", {box.min.x(), box.min.y(), box.min.z()}}, {"max", {box.max.x(), box.max.y(), box.max.z()}}}},
                  {"diagonal", parsed->diagonal()},
                  {"createdAt", now_iso()}};
    impl_->persist();
  }
  return {{"modelId", id}};
}

ojson Service::model(const std::string& id) const {
  std::lock_guard lock(impl_->mutex);
  ojson m = impl_->model_ref(id);
  m.erase("valueRange");
  return m;
}

ojson Service::models() const {
  std::lock_guard lock(impl_->mutex);
  ojson out = ojson::array();
  for (const auto& [id, m] : impl_->index["models"].items()) out.push_back({{"id", id}, {"filename", m["filename"]}});
  return {{"models", out}};
}

ojson Service::model_config(const std::string& id) {
  ojson cached;
  {
    std::lock_guard lock(impl_->mutex);
    cached = impl_->model_ref(id).value("valueRange", ojson());
  }
  const auto model = impl_->load(id);
  const ParamBounds bounds = default_bounds(*model);
  const ParamVector defaults = default_params(*model);
  if (cached.is_null()) {
    Approximator f(*model, bounds, 0);
    const ValueRange range = sample_value_range(f, impl_->options.rangeSamples, 0);
    cached = ojson::object();
    const auto lo = range.lo.to_array(), hi = range.hi.to_array();
    for (int i = 0; i < 4; ++i) cached[GrammarValues::names()[i]] = {lo[i], hi[i]};
    std::lock_guard lock(impl_->mutex);
    impl_->index["models"][id]["valueRange"] = cached;
    impl_->persist();
  }
  ojson params = ojson::array();
  const auto d = defaults.to_array();
  for (int i = 0; i < ParamVector::kDims; ++i) {
    params.push_back({{"name", std::string(ParamVector::names()[i])},
                      {"min", bounds.lo[i]},
                      {"max", bounds.hi[i]},
                      {"default", d[i]},
                      {"logScale", bounds.logScale[i]}});
  }
  return {{"modelId", id},
          {"dataType", model->is_mesh() ? "mesh" : "pointcloud"},
          {"epsilon", TargetSpec{}.epsilon},
          {"budget", GuidanceState{}.budget},
          {"parameters", params},
          {"valueRange", cached}};
}

ojson Service::create_job(const ojson& request) {
  if (!request.is_object()) throw ServiceError(400, "invalid-request", "/: expected an object");
  const auto str = [&](const char* key) -> std::string {
    if (!request.contains(key)) throw ServiceError(400, "invalid-request", std::string("/") + key + ": required");
    if (!request[key].is_string()) throw ServiceError(400, "invalid-request", std::string("/") + key + ": expected a string");
    return request[key];
  };
  const std::string modelId = str("modelId");
  const TargetSpec target = validated([&] {
    ojson t = ojson::object();
    if (!request.contains("target")) throw ValidationError("/target", "required");
    t["values"] = request["target"];
    for (const char* k : {"weights", "ranges", "epsilon"}) {
      if (request.contains(k)) t[k] = request[k];
    }
    return TargetSpec::from_json(t);
  });
  int budget = GuidanceState{}.budget;
  std::uint64_t seed = 0;
  validated([&] {
    if (request.contains("budget")) {
      if (!request["budget"].is_number_integer() || request["budget"].get<long long>() <= 0) {
        throw ValidationError("/budget", "expected a positive integer");
      }
      budget = request["budget"];
    }
    if (request.contains("seed")) {
      if (!request["seed"].is_number_integer() || request["seed"].get<long long>() < 0) {
        throw ValidationError("/seed", "expected a non-negative integer");
      }
      seed = request["seed"];
    }
    if (request.contains("theta")) theta_from(request["theta"], ParamVector{}, "/theta");
    return 0;
  });

  std::lock_guard lock(impl_->mutex);
  impl_->model_ref(modelId);
  ojson job = impl_->new_job("optimize", modelId, target, budget, seed);
  if (request.contains("theta")) job["theta"] = request["theta"];
  if (request.contains("warmFrom") && !request["warmFrom"].is_null()) {
    if (!request["warmFrom"].is_string()) throw ServiceError(400, "invalid-request", "/warmFrom: expected a job id");
    const std::string from = request["warmFrom"];
    const auto& source = impl_->job_ref(from);
    if (source["modelId"] != modelId) {
      throw ServiceError(400, "invalid-request", "/warmFrom: job '" + from + "' belongs to another model");
    }
    if (source["best"].is_null()) {
      throw ServiceError(409, "not-finished", "job '" + from + "' has no result to warm-start from");
    }
    job["warmFrom"] = from;
    job["theta"] = source["best"]["theta"];
  }
  const std::string id = job["id"];
  impl_->enqueue(std::move(job));
  return {{"jobId", id}};
}

ojson Service::refine(const std::string& id, const ojson& request) {
  ojson next;
  {
    std::lock_guard lock(impl_->mutex);
    const auto& source = impl_->job_ref(id);
    next = {{"modelId", source["modelId"]}, {"warmFrom", id}, {"budget", source["budget"]}, {"seed", source["seed"]}};
    next["epsilon"] = source["target"]["epsilon"];
  }
  if (!request.is_object() || !request.contains("target")) {
    throw ServiceError(400, "invalid-request", "/target: required");
  }
  for (const auto& [k, v] : request.items()) next[k] = v;
  next["warmFrom"] = id;
  return create_job(next);
}

ojson Service::cancel(const std::string& id) {
  std::lock_guard lock(impl_->mutex);
  auto& job = impl_->job_ref(id);
  const std::string status = job["status"];
  if (status == "queued") {
    job["status"] = "cancelled";
    job["finishedAt"] = now_iso();
    impl_->persist();
    impl_->doneCv.notify_all();
  } else if (status == "running") {
    impl_->cancelFlags.try_emplace(id, std::make_shared<std::atomic<bool>>(false)).first->second->store(true);
  }
  return impl_->public_job(job);
}

ojson Service::job(const std::string& id) const {
  std::lock_guard lock(impl_->mutex);
  return impl_->public_job(impl_->job_ref(id));
}

ojson Service::jobs() const {
  std::lock_guard lock(impl_->mutex);
  ojson out = ojson::array();
  for (const auto& [id, job] : impl_->index["jobs"].items()) {
    out.push_back({{"id", id},
                   {"kind", job["kind"]},
                   {"modelId", job["modelId"]},
                   {"status", job["status"]},
                   {"warmFrom", job["warmFrom"]}});
  }
  return {{"jobs", out}};
}

ojson Service::suggest(const ojson& request) {
  if (!request.is_object() || !request.contains("modelId") || !request["modelId"].is_string()) {
    throw ServiceError(400, "invalid-request", "/modelId: required");
  }
  const std::string modelId = request["modelId"];
  int samples = 8;
  std::uint64_t seed = 0;
  SuggestOptions options;
  validated([&] {
    if (request.contains("samples")) {
      if (!request["samples"].is_number_integer() || request["samples"] < 1 || request["samples"] > 64) {
        throw ValidationError("/samples", "expected an integer in [1, 64]");
      }
      samples = request["samples"];
    }
    if (request.contains("seed")) {
      if (!request["seed"].is_number_integer() || request["seed"].get<long long>() < 0) {
        throw ValidationError("/seed", "expected a non-negative integer");
      }
      seed = request["seed"];
    }
    if (request.contains("budgetPerSample")) {
      if (!request["budgetPerSample"].is_number_integer() || request["budgetPerSample"] < 1) {
        throw ValidationError("/budgetPerSample", "expected a positive integer");
      }
      options.budgetPerSample = request["budgetPerSample"];
    }
    return 0;
  });
  {
    std::lock_guard lock(impl_->mutex);
    impl_->model_ref(modelId);
  }
  const auto model = impl_->load(modelId);
  const auto family = suggest_family(*model, samples, seed, options);

  ojson candidates = ojson::array();
  std::lock_guard lock(impl_->mutex);
  for (const auto& c : family) {
    ojson job = impl_->new_job("suggestion", modelId, c.target, options.budgetPerSample, seed);
    const std::string id = job["id"];
    save_grammar(impl_->grammar_path(id), c.grammar);
    job["status"] = c.converged ? "converged" : "budget-exhausted";
    job["startedAt"] = job["createdAt"];
    job["finishedAt"] = now_iso();
    job["best"] = {{"theta", theta_json(c.theta)}, {"gamma", gamma_json(c.gamma)}, {"phi", phi_json(c.phi)}};
    job["converged"] = c.converged;
    impl_->index["jobs"][id] = job;
    candidates.push_back({{"jobId", id},
                          {"target", c.target.to_json()},
                          {"gamma", gamma_json(c.gamma)},
                          {"phi", phi_json(c.phi)},
                          {"converged", c.converged},
                          {"signature", rule_signature(c.grammar)},
                          {"links", impl_->public_job(job)["links"]}});
  }
  impl_->persist();
  return {{"modelId", modelId}, {"candidates", candidates}};
}

std::string Service::grammar(const std::string& id) const { return impl_->finished_grammar_text(id); }

std::string Service::grammar_file(const std::string& id, const std::string& name) const {
  impl_->finished_grammar_text(id);
  const std::string prefix = id + ".";
  if (name.rfind(prefix, 0) != 0 || name.find('/') != std::string::npos || name.find("..") != std::string::npos) {
    throw not_found("file", name);
  }
  const fs::path path = impl_->options.dataDir / "grammars" / name;
  if (!fs::exists(path)) throw not_found("file", name);
  return read_file(path);
}

std::pair<std::string, std::string> Service::preview(const std::string& id) const {
  impl_->finished_grammar_text(id);
  const SplitGrammar g = load_grammar(impl_->grammar_path(id));
  const Derivation d = derive(g);
  if (!d.model) throw ServiceError(409, "empty-preview", "the grammar derives no geometry");
  ElementLabels labels{d.elementLabels, "preview.mtl"};
  std::ostringstream out;
  if (d.model->is_mesh()) {
    write_obj(out, *d.model, &labels);
    return {out.str(), "text/plain"};
  }
  labels.mtlName.clear();
  write_ply(out, *d.model, &labels);
  return {out.str(), "text/plain"};
}

std::string Service::preview_mtl(const std::string& id) const {
  impl_->finished_grammar_text(id);
  const SplitGrammar g = load_grammar(impl_->grammar_path(id));
  int labels = 0;
  for (const auto* list : {&g.terminals, &g.nonterminals}) {
    for (const auto& s : *list) labels = std::max(labels, s.label + 1);
  }
  std::ostringstream out;
  write_mtl(out, labels);
  return out.str();
}

bool Service::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(impl_->mutex);
  return impl_->doneCv.wait_for(lock, timeout, [&] { return terminal(impl_->job_ref(id)["status"]); });
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;
  int port = -1;

  Impl(Service& s, std::size_t maxUpload) : service(s) {
    server.set_payload_max_length(maxUpload);
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 413 ? "payload-too-large" : res.status == 404 ? "not-found" : "http-error";
      res.set_content(error_json(code, httplib::status_message(res.status)).dump(), "application/json");
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      int status = 500;
      ojson body;
      try {
        std::rethrow_exception(ep);
      } catch (const ServiceError& e) {
        status = e.status();
        body = error_json(e.code(), e.what());
      } catch (const ValidationError& e) {
        status = 400;
        body = error_json("invalid-request", e.what());
      } catch (const nlohmann::json::exception& e) {
        status = 400;
        body = error_json("invalid-json", e.what());
      } catch (const std::exception& e) {
        body = error_json("internal", e.what());
      }
      res.status = status;
      res.set_content(body.dump(), "application/json");
    });
    server.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
    });
    routes();
  }

  static void send(httplib::Response& res, const ojson& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static ojson body(const httplib::Request& req) {
    if (req.body.empty()) return ojson::object();
    return ojson::parse(req.body);
  }

  void routes() {
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.Get("/api/config", [this](const httplib::Request&, httplib::Response& res) { send(res, service.config()); });
    server.Post("/api/models", [this](const httplib::Request& req, httplib::Response& res) {
      if (req.is_multipart_form_data()) {
        if (!req.has_file("file")) throw ServiceError(400, "invalid-request", "multipart field 'file' is required");
        const auto file = req.get_file_value("file");
        send(res, service.add_model(file.content, file.filename), 201);
        return;
      }
      if (!req.has_param("filename")) {
        throw ServiceError(400, "invalid-request", "upload a multipart 'file' or pass ?filename= with a raw body");
      }
      send(res, service.add_model(req.body, req.get_param_value("filename")), 201);
    });
    server.Get("/api/models", [this](const httplib::Request&, httplib::Response& res) { send(res, service.models()); });
    server.Get("/api/models/:id", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.model(req.path_params.at("id")));
    });
    server.Get("/api/models/:id/config", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.model_config(req.path_params.at("id")));
    });
    server.Post("/api/jobs", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.create_job(body(req)), 201);
    });
    server.Get("/api/jobs", [this](const httplib::Request&, httplib::Response& res) { send(res, service.jobs()); });
    server.Get("/api/jobs/:id", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.job(req.path_params.at("id")));
    });
    server.Get("/api/jobs/:id/grammar", [this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(service.grammar(req.path_params.at("id")), "application/json");
    });
    server.Get("/api/jobs/:id/files/:name", [this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(service.grammar_file(req.path_params.at("id"), req.path_params.at("name")), "text/plain");
    });
    server.Get("/api/jobs/:id/preview", [this](const httplib::Request& req, httplib::Response& res) {
      auto [text, type] = service.preview(req.path_params.at("id"));
      res.set_content(std::move(text), type);
    });
    server.Get("/api/jobs/:id/preview.mtl", [this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(service.preview_mtl(req.path_params.at("id")), "text/plain");
    });
    server.Post("/api/jobs/:id/refine", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.refine(req.path_params.at("id"), body(req)), 201);
    });
    server.Post("/api/jobs/:id/cancel", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.cancel(req.path_params.at("id")));
    });
    server.Post("/api/suggest", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service.suggest(body(req)));
    });
  }
};

HttpServer::HttpServer(Service& service, std::size_t maxUpload) : impl_(std::make_unique<Impl>(service, maxUpload)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else if (impl_->server.bind_to_port(host, port)) {
    impl_->port = port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port < 0) throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
  return impl_->port;
}

void HttpServer::listen() {
  if (impl_->port < 0) throw Error("bind() must be called before listen()");
  impl_->server.listen_after_bind();
}

void HttpServer::start() {
  if (impl_->port < 0) throw Error("bind() must be called before start()");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace gproc
