#include "multimage/cli.hpp"

#include <algorithm>
#include <iostream>
#include <memory>
#include <sstream>
#include <unordered_set>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "multimage/bench.hpp"
#include "multimage/clustering.hpp"
#include "multimage/corpus.hpp"
#include "multimage/datastats.hpp"
#include "multimage/error.hpp"
#include "multimage/fusion.hpp"
#include "multimage/generation.hpp"
#include "multimage/grouping.hpp"
#include "multimage/log.hpp"

namespace multimage::cli {

namespace {

// Run configuration files: {"command": "bench rank", "options": {"seed": 7, ...}}.
// Option names are the long flag names without dashes.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    std::vector<std::string> path;
    const CLI::App* leaf = app;
    while (!leaf->get_subcommands().empty()) {
      leaf = leaf->get_subcommands().front();
      path.push_back(leaf->get_name());
    }
    json options = json::object();
    for (const CLI::Option* opt : leaf->get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || opt->get_lnames().empty()) continue;
      if (opt->get_expected_min() == 0) {
        options[name] = opt->count() > 0 ? opt->as<bool>() : false;
        continue;
      }
      std::vector<std::string> values = opt->results();
      if (values.empty()) {
        if (!default_also || opt->get_default_str().empty()) continue;
        values = {opt->get_default_str()};
      }
      if (opt->get_expected_max() > 1 || opt->get_items_expected_max() > 1) {
        json arr = json::array();
        for (const auto& v : values) arr.push_back(typed(v));
        options[name] = std::move(arr);
      } else {
        options[name] = typed(values.back());
      }
    }
    std::string command;
    for (const auto& p : path) command += (command.empty() ? "" : " ") + p;
    return json{{"command", command}, {"options", options}}.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    std::stringstream buffer;
    buffer << in.rdbuf();
    json doc;
    try {
      doc = json::parse(buffer.str());
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("run configuration is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("options") || !doc["options"].is_object()) {
      throw CLI::ConfigError("run configuration needs an \"options\" object");
    }
    std::vector<std::string> parents;
    if (auto it = doc.find("command"); it != doc.end()) {
      if (!it->is_string()) throw CLI::ConfigError("\"command\" must be a string");
      std::istringstream words(it->get<std::string>());
      for (std::string w; words >> w;) parents.push_back(w);
    }
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc["options"].items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_null()) continue;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v, key));
      } else {
        item.inputs.push_back(scalar(value, key));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  // Numbers stay numbers only when they print back to the same text.
  static json typed(const std::string& s) {
    try {
      auto v = json::parse(s);
      if (v.is_number() && v.dump() == s) return v;
    } catch (const json::exception&) {
    }
    return s;
  }

  static std::string scalar(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConfigError("option \"" + key + "\" must be a string, number, boolean or list of those");
  }
};

struct EndpointArgs {
  std::string base_url;
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  int max_attempts = 6;
  int retry_base_ms = 500;
  int timeout_s = 300;

  Endpoint endpoint() const {
    Endpoint e;
    e.base_url = base_url;
    e.model = model;
    e.api_key_env = api_key_env;
    e.read_timeout = std::chrono::seconds(timeout_s);
    return e;
  }
  RetryPolicy policy() const {
    RetryPolicy p;
    p.max_attempts = max_attempts;
    p.base_delay = std::chrono::milliseconds(retry_base_ms);
    return p;
  }
};

void add_endpoint(CLI::App* app, EndpointArgs& e) {
  app->add_option("--base-url", e.base_url, "OpenAI-compatible API root, e.g. https://host/v1")->required();
  app->add_option("--model", e.model, "model name sent with each request")->required();
  app->add_option("--api-key-env", e.api_key_env, "environment variable holding the API key");
  app->add_option("--max-attempts", e.max_attempts, "attempts per request, including the first")
      ->check(CLI::Range(1, 100));
  app->add_option("--retry-base-ms", e.retry_base_ms, "first backoff delay in milliseconds")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--timeout", e.timeout_s, "read timeout per request, seconds")->check(CLI::PositiveNumber);
}

std::filesystem::path sibling(const std::filesystem::path& p, std::string_view suffix) {
  auto out = p;
  out += suffix;
  return out;
}

void write_failures(const std::vector<ItemFailure>& failures, const std::filesystem::path& out) {
  std::vector<json> lines;
  for (const auto& f : failures) lines.push_back(to_json(f));
  write_jsonl(failures_path(out), lines);
}

std::string kind_name(ExitCode code) {
  switch (code) {
    case ExitCode::kOk: return "ok";
    case ExitCode::kInternal: return "internal";
    case ExitCode::kUsage: return "usage";
    case ExitCode::kConfig: return "config";
    case ExitCode::kIo: return "io";
    case ExitCode::kValidation: return "validation";
    case ExitCode::kPlanning: return "planning";
    case ExitCode::kRemote: return "remote";
  }
  return "internal";
}

int report_error(std::ostream& err, ExitCode code, const std::string& message,
                 const std::vector<std::string>& offenders = {}) {
  json e = {{"kind", kind_name(code)}, {"exit_code", static_cast<int>(code)}, {"message", message}};
  if (!offenders.empty()) e["offenders"] = offenders;
  err << json{{"error", e}}.dump() << '\n';
  return static_cast<int>(code);
}

SamplingVariant variant_from_string(const std::string& s) {
  return s == "farthest" ? SamplingVariant::kFarthest : SamplingVariant::kNearest;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-image instruction data pipeline and pairwise benchmark harness", "multimage"};
  app.option_defaults()->always_capture_default();
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "JSON run configuration; flags on the command line take precedence");
  app.config_formatter(std::make_shared<JsonConfig>());
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  // ingest
  std::string in_path, out_path, format = "jsonl", image_root;
  bool check_images = false;
  auto* ingest = app.add_subcommand("ingest", "normalise an image-caption corpus to JSONL");
  ingest->add_option("--input", in_path, "source corpus")->required();
  ingest->add_option("--output", out_path, "corpus JSONL to write")->required();
  ingest->add_option("--format", format, "jsonl or sharegpt4v")->check(CLI::IsMember({"jsonl", "sharegpt4v"}));
  ingest->add_option("--image-root", image_root, "directory that relative image paths are resolved against");
  ingest->add_flag("--check-images", check_images, "fail if a local image file does not exist");

  // embed
  EndpointArgs endpoint;
  std::size_t concurrency = 4;
  bool strict = false;
  std::string cache_dir;
  auto* embed = app.add_subcommand("embed", "embed every image and caption through an embeddings endpoint");
  embed->add_option("--input", in_path, "corpus JSONL")->required();
  embed->add_option("--output", out_path, "embeddings JSONL to write")->required();
  add_endpoint(embed, endpoint);
  embed->add_option("--concurrency", concurrency, "requests in flight")->check(CLI::Range(1, 256));
  embed->add_flag("--strict", strict, "abort on the first failed item");
  embed->add_option("--cache-dir", cache_dir, "reuse embeddings fetched by earlier runs");

  // fuse
  double c = 0.2;
  bool normalize = false;
  auto* fuse = app.add_subcommand("fuse", "combine image and caption embeddings: image + c * caption");
  fuse->add_option("--input", in_path, "embeddings JSONL")->required();
  fuse->add_option("--output", out_path, "vectors JSONL to write")->required();
  fuse->add_option("--c", c, "caption weight");
  fuse->add_flag("--normalize", normalize, "scale both inputs to unit length first");

  // reduce
  std::string method = "pca", from_path;
  std::size_t dim = 0;
  auto* reduce = app.add_subcommand("reduce", "project fused vectors to fewer dimensions");
  reduce->add_option("--input", in_path, "vectors JSONL")->required();
  reduce->add_option("--output", out_path, "vectors JSONL to write")->required();
  reduce->add_option("--method", method, "pca, import or none")->check(CLI::IsMember({"pca", "import", "none"}));
  reduce->add_option("--dim", dim, "output dimension for pca");
  reduce->add_option("--from", from_path, "externally reduced vectors for --method import");

  // cluster
  std::string algorithm = "hdbscan";
  ClusterParams cluster_params;
  auto* cluster = app.add_subcommand("cluster", "density-based clustering of vectors");
  cluster->add_option("--input", in_path, "vectors JSONL")->required();
  cluster->add_option("--output", out_path, "assignment JSONL to write")->required();
  cluster->add_option("--algorithm", algorithm, "hdbscan or dbscan")->check(CLI::IsMember({"hdbscan", "dbscan"}));
  cluster->add_option("--min-cluster-size", cluster_params.min_cluster_size, "smallest reported cluster");
  cluster->add_option("--min-samples", cluster_params.min_samples, "neighbourhood size for core distances");
  cluster->add_option("--eps", cluster_params.dbscan_eps, "dbscan neighbourhood radius");

  // match
  std::string first_path, second_path;
  auto* match = app.add_subcommand("match", "greedily pair clusters from two embedding spaces");
  match->add_option("--first", first_path, "assignment JSONL from the first space")->required();
  match->add_option("--second", second_path, "assignment JSONL from the second space")->required();
  match->add_option("--output", out_path, "matches JSONL to write")->required();

  // sample
  std::string group_method = "rsi", matches_path, variant = "nearest";
  SamplingOptions sampling;
  auto* sample = app.add_subcommand("sample", "build image groups by iterative distance-weighted sampling");
  sample->add_option("--method", group_method, "rsi or gcma")->check(CLI::IsMember({"rsi", "gcma"}));
  sample->add_option("--input", in_path, "vectors JSONL")->required();
  sample->add_option("--matches", matches_path, "matches JSONL (gcma)");
  sample->add_option("--output", out_path, "groups JSONL to write")->required();
  sample->add_option("--k", sampling.k, "distance exponent");
  sample->add_option("--epsilon", sampling.epsilon, "added to summed distances");
  sample->add_option("--group-size-min", sampling.group_size_lo, "smallest group");
  sample->add_option("--group-size-max", sampling.group_size_hi, "largest group");
  sample->add_option("--images-per-batch", sampling.images_per_batch, "corpus batch size");
  sample->add_option("--conversations-per-batch", sampling.conversations_per_batch, "groups per full batch");
  sample->add_flag("--with-replacement", sampling.with_replacement, "let groups in a batch share images");
  sample->add_option("--variant", variant, "nearest or farthest")->check(CLI::IsMember({"nearest", "farthest"}));
  sample->add_option("--seed", sampling.seed, "run seed");

  // generate
  std::string groups_path, corpus_path, template_name = "long_form";
  GenerationOptions gen;
  auto* generate = app.add_subcommand("generate", "turn image groups into multi-turn conversations");
  generate->add_option("--groups", groups_path, "groups JSONL")->required();
  generate->add_option("--corpus", corpus_path, "corpus JSONL with the captions")->required();
  generate->add_option("--output", out_path, "dataset JSONL (resumed if it exists)")->required();
  add_endpoint(generate, endpoint);
  generate->add_option("--template", template_name, "llava_style or long_form")
      ->check(CLI::IsMember({"llava_style", "long_form"}));
  generate->add_option("--temperature", gen.temperature, "sampling temperature");
  generate->add_option("--top-p", gen.top_p, "nucleus sampling mass");
  generate->add_option("--max-tokens", gen.max_tokens, "completion limit per request");
  generate->add_option("--concurrency", concurrency, "requests in flight")->check(CLI::Range(1, 256));
  generate->add_option("--seed", gen.seed, "per-request seeds derive from this");
  generate->add_flag("--strict", strict, "reject any malformed completion instead of keeping its valid prefix");
  generate->add_option("--min-turns", gen.bounds.min_turns, "fewest turns per conversation");
  generate->add_option("--max-turns", gen.bounds.max_turns, "most turns per conversation");

  // stats
  std::string counter_name = "whitespace";
  auto* stats = app.add_subcommand("stats", "dataset statistics");
  stats->add_option("--input", in_path, "dataset JSONL")->required();
  stats->add_option("--output", out_path, "statistics JSON to write")->required();
  stats->add_option("--token-counter", counter_name, "token counting scheme");

  // validate
  TurnBounds bounds;
  std::string report_path;
  auto* validate = app.add_subcommand("validate", "check a dataset line by line");
  validate->add_option("--input", in_path, "dataset JSONL")->required();
  validate->add_flag("--strict", strict, "also enforce turn bounds and image placeholders");
  validate->add_option("--min-turns", bounds.min_turns, "fewest turns per conversation");
  validate->add_option("--max-turns", bounds.max_turns, "most turns per conversation");
  validate->add_option("--report", report_path, "write the report as JSON");

  // bench
  auto* bench = app.add_subcommand("bench", "pairwise benchmark against a baseline model");
  bench->require_subcommand(1);
  std::string bench_path, answers_path, verdicts_path, baseline, table_path, model_id;
  double temperature = 0.0;
  int max_tokens = 2048;
  std::size_t rounds = 1000;
  std::uint64_t seed = 0;
  std::vector<std::string> delta_specs;

  auto* answer = bench->add_subcommand("answer", "collect one model's answers");
  answer->add_option("--bench", bench_path, "benchmark JSONL")->required();
  answer->add_option("--output", out_path, "answers JSONL (other models' answers are kept)")->required();
  answer->add_option("--model-id", model_id, "name recorded for the model (default: --model)");
  add_endpoint(answer, endpoint);
  answer->add_option("--concurrency", concurrency, "requests in flight")->check(CLI::Range(1, 256));
  answer->add_option("--temperature", temperature, "sampling temperature");
  answer->add_option("--max-tokens", max_tokens, "completion limit per turn");

  auto* judge = bench->add_subcommand("judge", "pairwise judgements of every model against the baseline");
  judge->add_option("--bench", bench_path, "benchmark JSONL")->required();
  judge->add_option("--answers", answers_path, "answers JSONL")->required();
  judge->add_option("--baseline", baseline, "baseline model id")->required();
  judge->add_option("--output", out_path, "verdicts JSONL to write")->required();
  add_endpoint(judge, endpoint);
  judge->add_option("--concurrency", concurrency, "requests in flight")->check(CLI::Range(1, 256));
  judge->add_option("--temperature", temperature, "judge sampling temperature");
  judge->add_option("--max-tokens", max_tokens, "judge completion limit");

  auto* rank = bench->add_subcommand("rank", "Bradley-Terry leaderboard with bootstrap intervals");
  rank->add_option("--verdicts", verdicts_path, "verdicts JSONL")->required();
  rank->add_option("--answers", answers_path, "answers JSONL (for average tokens)")->required();
  rank->add_option("--baseline", baseline, "baseline model id")->required();
  rank->add_option("--output", out_path, "leaderboard JSONL to write")->required();
  rank->add_option("--table", table_path, "also write the text table here");
  rank->add_option("--rounds", rounds, "bootstrap rounds")->check(CLI::Range(100, 1000000));
  rank->add_option("--seed", seed, "bootstrap seed");
  rank->add_option("--concurrency", concurrency, "bootstrap threads")->check(CLI::Range(1, 256));
  rank->add_option("--delta", delta_specs, "MODEL=REFERENCE pairs for the delta column");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::FileError& e) {
    return report_error(err, ExitCode::kIo, e.what());
  } catch (const CLI::ConfigError& e) {
    return report_error(err, ExitCode::kConfig, e.what());
  } catch (const CLI::ParseError& e) {
    return report_error(err, ExitCode::kUsage, e.what());
  }

  log::set_level(quiet ? log::Level::kWarn : verbose ? log::Level::kDebug : log::Level::kInfo);

  const CLI::App* leaf = &app;
  std::string command;
  while (!leaf->get_subcommands().empty()) {
    leaf = leaf->get_subcommands().front();
    command += (command.empty() ? "" : " ") + leaf->get_name();
  }

  try {
    if (const auto* config_opt = app.get_config_ptr(); config_opt != nullptr && config_opt->count() > 0) {
      const auto config_path = config_opt->as<std::string>();
      const auto doc = read_json_file(config_path);
      if (doc.contains("command") && doc["command"] != command) {
        throw ConfigError(fmt::format("{} configures \"{}\" but the command is \"{}\"", config_path,
                                      doc["command"].get<std::string>(), command));
      }
    }
    auto echo = [&](const std::filesystem::path& output) {
      std::ofstream f(sibling(output, ".config.json"), std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot write " + sibling(output, ".config.json").string());
      f << app.config_to_str(true, false);
    };

    if (command == "ingest") {
      auto pairs = format == "sharegpt4v" ? import_sharegpt4v(in_path, image_root) : read_corpus(in_path);
      if (format == "jsonl" && !image_root.empty()) {
        for (auto& p : pairs) {
          if (!is_url(p.image_ref) && std::filesystem::path(p.image_ref).is_relative()) {
            p.image_ref = (std::filesystem::path(image_root) / p.image_ref).string();
          }
        }
      }
      if (check_images) {
        std::vector<std::string> missing;
        for (const auto& p : pairs) {
          if (!image_ref_exists(p.image_ref)) missing.push_back(p.id);
        }
        if (!missing.empty()) {
          throw ValidationError(fmt::format("{} image(s) not found, e.g. for \"{}\"", missing.size(), missing.front()),
                                missing);
        }
      }
      write_corpus(out_path, pairs);
      echo(out_path);
      out << json{{"pairs", pairs.size()}}.dump() << '\n';
    } else if (command == "embed") {
      const auto pairs = read_corpus(in_path);
      const ApiClient client(endpoint.endpoint(), endpoint.policy());
      FetchOptions options;
      options.concurrency = concurrency;
      options.strict = strict;
      if (!cache_dir.empty()) options.cache_dir = cache_dir;
      const auto result = fetch_embeddings(pairs, client, options);
      write_embeddings(result.records, out_path);
      write_failures(result.failures, out_path);
      echo(out_path);
      out << json{{"records", result.records.size()},
                  {"failures", result.failures.size()},
                  {"retries", result.retries},
                  {"cache_hits", result.cache_hits}}
                 .dump()
          << '\n';
    } else if (command == "fuse") {
      FusionConfig cfg;
      cfg.c = c;
      cfg.normalize_inputs = normalize;
      const auto fused = fuse_all(read_embeddings(in_path), cfg);
      write_vectors(fused, out_path);
      echo(out_path);
      out << json{{"vectors", fused.size()}}.dump() << '\n';
    } else if (command == "reduce") {
      auto points = read_vectors(in_path);
      Reduction result;
      if (method == "pca") {
        if (dim == 0) throw ConfigError("--dim is required for --method pca");
        FusionConfig cfg;
        cfg.reduced_dim = dim;
        result = reduce_dimensions(points, cfg);
      } else if (method == "import") {
        if (from_path.empty()) throw ConfigError("--from is required for --method import");
        std::vector<std::string> ids;
        for (const auto& p : points) ids.push_back(p.id);
        result.points = import_reduction(from_path, ids);
        const std::size_t d_in = points.empty() ? 0 : points.front().vector.size();
        const std::size_t d_out = result.points.empty() ? 0 : result.points.front().vector.size();
        result.info = {"import", d_in, d_out, {}};
      } else {
        result = reduce_dimensions(points, FusionConfig{});
      }
      write_vectors(result.points, out_path);
      write_json_file(sibling(out_path, ".meta.json"), result.info.to_json());
      echo(out_path);
      out << result.info.to_json().dump() << '\n';
    } else if (command == "cluster") {
      const auto points = read_vectors(in_path);
      const auto assignment =
          algorithm == "dbscan" ? dbscan_cluster(points, cluster_params) : hdbscan_cluster(points, cluster_params);
      write_assignment(assignment, out_path);
      const auto summary = cluster_summary(assignment).to_json();
      write_json_file(sibling(out_path, ".summary.json"), summary);
      echo(out_path);
      out << summary.dump() << '\n';
    } else if (command == "match") {
      const auto a = read_assignment(first_path);
      const auto b = read_assignment(second_path);
      const std::unordered_set<std::string> ids_a(a.ids.begin(), a.ids.end());
      const auto shared = std::count_if(b.ids.begin(), b.ids.end(), [&](const auto& id) { return ids_a.contains(id); });
      if (static_cast<std::size_t>(shared) != a.ids.size() || a.ids.size() != b.ids.size()) {
        log::warn("the two assignments cover different ids ({} vs {}, {} shared)", a.ids.size(), b.ids.size(), shared);
      }
      const auto result = greedy_cluster_match(a.clusters(), b.clusters());
      write_matches(result, out_path);
      echo(out_path);
      out << json{{"pairs", result.pairs.size()}, {"total_samples", result.total_samples}}.dump() << '\n';
    } else if (command == "sample") {
      sampling.variant = variant_from_string(variant);
      const auto points = read_vectors(in_path);
      std::vector<ImageGroup> groups;
      if (group_method == "gcma") {
        if (matches_path.empty()) throw ConfigError("--matches is required for --method gcma");
        groups = sample_gcma_groups(read_matches(matches_path), points, sampling);
      } else {
        groups = sample_rsi_groups(points, sampling);
      }
      write_groups(groups, out_path);
      echo(out_path);
      out << json{{"groups", groups.size()}}.dump() << '\n';
    } else if (command == "generate") {
      gen.template_name = template_from_string(template_name);
      gen.concurrency = concurrency;
      gen.mode = strict ? ParseMode::kStrict : ParseMode::kLenient;
      const auto groups = read_groups(groups_path);
      const auto corpus = read_corpus(corpus_path);
      const ApiClient client(endpoint.endpoint(), endpoint.policy());
      echo(out_path);
      const auto report = run_generation_batch(groups, corpus, client, gen, out_path);
      out << json{{"conversations", report.conversations.size()},
                  {"requested", report.requested},
                  {"resumed", report.resumed},
                  {"failures", report.failures.size()},
                  {"retries", report.retries}}
                 .dump()
          << '\n';
    } else if (command == "stats") {
      const auto s = compute_stats(in_path, token_counter(counter_name));
      write_json_file(out_path, s.to_json());
      echo(out_path);
      out << stats_table(s);
    } else if (command == "validate") {
      const auto report = validate_dataset(in_path, strict, bounds);
      if (!report_path.empty()) {
        write_json_file(report_path, report.to_json());
        echo(report_path);
      }
      for (const auto& v : report.violations) {
        out << fmt::format("line {}{}: {}\n", v.line, v.id.empty() ? "" : " (" + v.id + ")", v.message);
      }
      out << fmt::format("{} of {} records valid\n", report.valid, report.lines);
      if (!report.ok()) {
        return report_error(err, ExitCode::kValidation,
                            fmt::format("{} violation(s) in {}", report.violations.size(), in_path));
      }
    } else if (command == "bench answer") {
      const auto examples = read_bench(bench_path);
      const ApiClient client(endpoint.endpoint(), endpoint.policy());
      AnswerOptions options;
      options.model_id = model_id;
      options.concurrency = concurrency;
      options.temperature = temperature;
      options.max_tokens = max_tokens;
      auto result = collect_answers(examples, client, options);
      const std::string id = model_id.empty() ? endpoint.model : model_id;
      std::vector<ModelAnswer> merged;
      if (std::filesystem::exists(out_path)) {
        for (auto& a : read_answers(out_path)) {
          if (a.model_id != id) merged.push_back(std::move(a));
        }
      }
      merged.insert(merged.end(), result.answers.begin(), result.answers.end());
      write_answers(merged, out_path);
      write_failures(result.failures, out_path);
      echo(out_path);
      out << json{{"answers", result.answers.size()}, {"failures", result.failures.size()}, {"retries", result.retries}}
                 .dump()
          << '\n';
    } else if (command == "bench judge") {
      const auto examples = read_bench(bench_path);
      const auto answers = read_answers(answers_path);
      const ApiClient client(endpoint.endpoint(), endpoint.policy());
      JudgeOptions options;
      options.concurrency = concurrency;
      options.temperature = temperature;
      options.max_tokens = max_tokens;
      const auto result = run_judging(examples, answers, baseline, client, options);
      write_verdicts(result.verdicts, out_path);
      write_failures(result.failures, out_path);
      echo(out_path);
      const auto flagged = std::count_if(result.verdicts.begin(), result.verdicts.end(),
                                         [](const JudgeVerdict& v) { return v.flagged; });
      out << json{{"verdicts", result.verdicts.size()},
                  {"flagged", flagged},
                  {"skipped", result.skipped},
                  {"failures", result.failures.size()}}
                 .dump()
          << '\n';
    } else if (command == "bench rank") {
      std::map<std::string, std::string> refs;
      for (const auto& spec : delta_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
          throw ConfigError("--delta expects MODEL=REFERENCE, got \"" + spec + "\"");
        }
        refs[spec.substr(0, eq)] = spec.substr(eq + 1);
      }
      const auto battles = verdicts_to_battles(read_verdicts(verdicts_path));
      if (battles.empty()) throw ValidationError("no verdicts in " + verdicts_path);
      std::map<std::string, double> scores;
      for (const auto& [model, p] : fit_strengths(battles, baseline)) scores.emplace(model, strength_score(p));
      const auto cis = bootstrap_ci(battles, baseline, rounds, seed, concurrency);
      const auto board = build_leaderboard(scores, cis, read_answers(answers_path), baseline, refs);
      write_jsonl(out_path, leaderboard_records(board));
      const auto table = leaderboard_table(board);
      if (!table_path.empty()) {
        std::ofstream f(table_path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + table_path);
        f << table;
      }
      echo(out_path);
      out << table;
    } else {
      return report_error(err, ExitCode::kUsage, "no command given");
    }
  } catch (const ValidationError& e) {
    return report_error(err, e.exit_code(), e.what(), e.offenders());
  } catch (const Error& e) {
    return report_error(err, e.exit_code(), e.what());
  } catch (const std::exception& e) {
    return report_error(err, ExitCode::kInternal, e.what());
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace multimage::cli
