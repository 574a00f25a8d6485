// engine: command-line front end for consultations, training and evaluation.

#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "trimediq/trimediq.hpp"

namespace {

using namespace trimediq;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

HttpOptions http_options(const EngineConfig& cfg) {
  return {cfg.retry, cfg.timeout_s, cfg.api_key, cfg.max_in_flight};
}

/// Owns every backend object a command may need; choices come from flags and config.
struct Runtime {
  EngineConfig cfg;
  RelationSchema schema = RelationSchema::clinical_default();
  std::unique_ptr<ChatBackend> chat;
  std::unique_ptr<AdapterClient> adapter;
  std::unique_ptr<ChatBackend> adapter_chat;
  std::optional<ToyExpert> toy;
  std::unique_ptr<ToyExpertScorer> toy_scorer;
  std::unique_ptr<TextScorer> chat_scorer;
  std::unique_ptr<PrefixScorer> remote_scorer;
  std::unique_ptr<EmbeddingProvider> embedder;
  std::optional<ProjectionModel> projection;
  std::unique_ptr<PatientPolicy> patient;
  std::unique_ptr<TripletGenerator> generator;

  ChatBackend& chat_backend() {
    if (adapter_chat) return *adapter_chat;
    if (!chat) {
      if (cfg.chat_url.empty())
        throw ConfigError("a chat backend is required; set chat_url in the config or TRIMEDIQ_CHAT_URL");
      chat = std::make_unique<OpenAIChatBackend>(cfg.chat_url, cfg.chat_model, http_options(cfg));
    }
    return *chat;
  }

  AdapterClient& adapter_client() {
    if (!adapter) {
      if (cfg.adapter_url.empty())
        throw ConfigError("the adapter backend needs adapter_url in the config or TRIMEDIQ_ADAPTER_URL");
      adapter = std::make_unique<AdapterClient>(cfg.adapter_url, http_options(cfg));
    }
    return *adapter;
  }

  void setup_patient(const std::string& kind) {
    if (kind == "rule") patient = std::make_unique<RuleBasedPatient>();
    else if (kind == "chat") patient = std::make_unique<ChatPatient>(chat_backend());
    else throw ConfigError("unknown patient '" + kind + "' (expected rule or chat)");
  }

  void setup_generator(const std::string& kind) {
    if (kind == "rule") generator = std::make_unique<RuleBasedTripletGenerator>();
    else if (kind == "chat") generator = std::make_unique<ChatTripletGenerator>(chat_backend(), cfg.retry);
    else throw ConfigError("unknown extractor '" + kind + "' (expected rule or chat)");
  }

  /// expert_kind: toy (checkpoint), chat (text modes only) or adapter.
  ExpertBackends setup_expert(const std::string& expert_kind, const std::string& expert_path,
                              const std::string& projection_path, std::size_t embed_dim) {
    ExpertBackends b;
    if (!projection_path.empty()) projection = ProjectionModel::load(projection_path);
    if (expert_kind == "toy") {
      if (expert_path.empty()) throw ConfigError("--expert <checkpoint> is required for the toy expert");
      toy = ToyExpert::load(expert_path);
      toy_scorer = std::make_unique<ToyExpertScorer>(*toy);
      b.text = toy_scorer.get();
      b.prefix = toy_scorer.get();
      if (projection && projection->expert_digest != toy->digest())
        throw ConfigError("projection checkpoint was trained against expert " + projection->expert_digest +
                          ", but the loaded expert has digest " + toy->digest());
    } else if (expert_kind == "chat") {
      chat_scorer = std::make_unique<ChatTextScorer>(chat_backend());
      b.text = chat_scorer.get();
    } else if (expert_kind == "adapter") {
      adapter_chat = std::make_unique<AdapterChatBackend>(adapter_client());
      chat_scorer = std::make_unique<ChatTextScorer>(*adapter_chat);
      b.text = chat_scorer.get();
      if (uses_prefix(cfg.mode)) {
        if (!projection) throw ConfigError("mode " + to_string(cfg.mode) + " needs --projection <checkpoint>");
        remote_scorer = std::make_unique<RemotePrefixScorer>(adapter_client(), projection->projector.model_dim);
        b.prefix = remote_scorer.get();
      }
    } else {
      throw ConfigError("unknown expert backend '" + expert_kind + "' (expected toy, chat or adapter)");
    }
    if (projection) embed_dim = projection->config.hidden;
    if (expert_kind == "adapter" && uses_prefix(cfg.mode))
      embedder = std::make_unique<RemoteEmbeddingProvider>(adapter_client());
    else
      embedder = std::make_unique<HashEmbeddingProvider>(embed_dim);
    b.embedder = embedder.get();
    b.projection = projection ? &*projection : nullptr;
    validate_backends(cfg.mode, b);
    return b;
  }
};

void load_config(EngineConfig& cfg, const std::string& path) {
  if (!path.empty()) cfg.merge_file(path);
  cfg.merge_env();
}

std::vector<CaseRecord> load_cases(const std::string& data, std::size_t synthetic_n, std::uint64_t seed) {
  if (!data.empty()) return load_dataset(data);
  std::vector<CaseRecord> out;
  for (auto& c : synthetic::generate_cases(synthetic_n, seed)) out.push_back(std::move(c.record));
  return out;
}

/// Planner questions: one per line from a file, else the synthetic review questions.
std::vector<std::string> load_questions(const std::string& path) {
  if (path.empty()) return synthetic::review_questions();
  std::vector<std::string> out;
  std::stringstream ss(read_file(path));
  std::string line;
  while (std::getline(ss, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  if (out.empty()) throw ConfigError("question file " + path + " is empty");
  return out;
}

std::string transcript_text(const ConsultationResult& r) {
  std::string s;
  for (const auto& e : r.transcript) s += e.role + ": " + e.text + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph grounded multi-turn medical QA engine"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Engine config JSON")->check(CLI::ExistingFile);

  // extract
  auto* extract = app.add_subcommand("extract", "Turn patient responses (one per line) into a KG JSON document");
  std::string ex_in, ex_schema, ex_out, ex_extractor = "rule";
  extract->add_option("--in", ex_in, "Response file, one utterance per line")->required()->check(CLI::ExistingFile);
  extract->add_option("--schema", ex_schema, "Relation schema JSON (list of names)")->check(CLI::ExistingFile);
  extract->add_option("--out", ex_out, "Output KG JSON (default stdout)");
  extract->add_option("--extractor", ex_extractor, "rule or chat");

  // consult
  auto* consult = app.add_subcommand("consult", "Run one consultation and print the transcript");
  std::string co_case, co_mode = "flat", co_data, co_expert, co_expert_kind = "toy", co_projection, co_patient = "rule",
              co_extractor = "rule";
  std::size_t co_synthetic = 200;
  int co_max_turns = 0;
  consult->add_option("--case", co_case, "Case id")->required();
  consult->add_option("--mode", co_mode, "flat, ip, pt or pgt");
  consult->add_option("--data", co_data, "Dataset JSONL (default: synthetic cases)");
  consult->add_option("--synthetic", co_synthetic, "Synthetic case count when --data is absent");
  consult->add_option("--expert", co_expert, "Toy expert checkpoint");
  consult->add_option("--expert-backend", co_expert_kind, "toy, chat or adapter");
  consult->add_option("--projection", co_projection, "Projection checkpoint (pt/pgt)");
  consult->add_option("--patient", co_patient, "rule or chat");
  consult->add_option("--extractor", co_extractor, "rule or chat");
  consult->add_option("--max-turns", co_max_turns, "Override max_turns");
  std::string co_questions;
  consult->add_option("--questions", co_questions, "Expert question list, one per line")->check(CLI::ExistingFile);

  // synth
  auto* synth = app.add_subcommand("synth", "Write synthetic cases as dataset JSONL");
  std::size_t sy_n = 500;
  std::uint64_t sy_seed = 0;
  std::string sy_out;
  synth->add_option("--n", sy_n, "Number of cases");
  synth->add_option("--seed", sy_seed, "Generator seed");
  synth->add_option("--out", sy_out, "Output JSONL")->required();

  // pretrain-expert
  auto* pretrain = app.add_subcommand("pretrain-expert", "Pretrain and freeze the toy expert on synthetic cases");
  std::string pe_out;
  std::size_t pe_n = 500, pe_epochs = 60;
  std::uint64_t pe_seed = 0;
  double pe_lr = 3e-3;
  pretrain->add_option("--out", pe_out, "Expert checkpoint path")->required();
  pretrain->add_option("--n", pe_n, "Synthetic pretraining cases");
  pretrain->add_option("--seed", pe_seed, "Seed for data and initialisation");
  pretrain->add_option("--epochs", pe_epochs, "Epoch budget");
  pretrain->add_option("--lr", pe_lr, "Learning rate");
  bool pe_flat = false;
  pretrain->add_flag("--with-flat", pe_flat, "Also train on raw-dialogue prompts (slower; needs more epochs)");

  // train
  auto* train = app.add_subcommand("train", "Train graph encoder and projector against the frozen expert");
  std::string tr_data, tr_expert, tr_out, tr_mode = "pgt", tr_extractor = "rule";
  TrainConfig tr_cfg;
  train->add_option("--data", tr_data, "Training dataset JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--expert", tr_expert, "Toy expert checkpoint")->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr_out, "Projection checkpoint path")->required();
  train->add_option("--mode", tr_mode, "pt or pgt");
  train->add_option("--extractor", tr_extractor, "rule or chat (builds each case's KG)");
  train->add_option("--epochs", tr_cfg.epochs, "Epochs");
  train->add_option("--lr", tr_cfg.lr, "Learning rate");
  train->add_option("--batch", tr_cfg.batch_size, "Batch size");
  train->add_option("--seed", tr_cfg.seed, "Seed");
  train->add_option("--hidden", tr_cfg.hidden, "Encoder width h");
  train->add_option("--layers", tr_cfg.layers, "Encoder layers");
  train->add_option("--prefix-len", tr_cfg.prefix_len, "Prefix length k");
  bool tr_augment = false;
  train->add_flag("--augment", tr_augment,
                  "Add interrupted-dialogue KGs with soft targets from the synthetic rule table (synthetic data only)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a mode across seeds and write a report");
  std::string ev_data, ev_mode = "flat", ev_seeds = "0,1,2", ev_report, ev_format, ev_expert, ev_expert_kind = "toy",
              ev_projection, ev_patient = "rule", ev_extractor = "rule";
  std::size_t ev_synthetic = 200, ev_workers = 0;
  int ev_max_turns = 0;
  double ev_threshold = 0.0;
  eval->add_option("--data", ev_data, "Dataset JSONL (default: synthetic cases)");
  eval->add_option("--synthetic", ev_synthetic, "Synthetic case count when --data is absent");
  eval->add_option("--mode", ev_mode, "flat, ip, pt or pgt");
  eval->add_option("--seeds", ev_seeds, "Comma-separated seeds");
  eval->add_option("--report", ev_report, "Report path")->required();
  eval->add_option("--format", ev_format, "json, csv or md (default from extension, else json)");
  eval->add_option("--expert", ev_expert, "Toy expert checkpoint");
  eval->add_option("--expert-backend", ev_expert_kind, "toy, chat or adapter");
  eval->add_option("--projection", ev_projection, "Projection checkpoint (pt/pgt)");
  eval->add_option("--patient", ev_patient, "rule or chat");
  eval->add_option("--extractor", ev_extractor, "rule or chat");
  eval->add_option("--workers", ev_workers, "Parallel consultations");
  eval->add_option("--max-turns", ev_max_turns, "Override max_turns");
  eval->add_option("--threshold", ev_threshold, "Override confidence threshold");
  std::string ev_questions;
  eval->add_option("--questions", ev_questions, "Expert question list, one per line")->check(CLI::ExistingFile);

  // report
  auto* report = app.add_subcommand("report", "Render a JSON evaluation report");
  std::string rp_in, rp_format = "md", rp_out;
  report->add_option("--in", rp_in, "Report JSON")->required()->check(CLI::ExistingFile);
  report->add_option("--format", rp_format, "json, csv or md");
  report->add_option("--out", rp_out, "Output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    Runtime rt;
    load_config(rt.cfg, config_path);
    rt.schema = rt.cfg.schema();

    if (*extract) {
      if (!ex_schema.empty()) rt.schema = RelationSchema::load(ex_schema);
      rt.setup_generator(ex_extractor);
      PatientKG kg(rt.schema.version());
      std::ifstream in(ex_in);
      std::string line;
      int turn = 0;
      InsertionReport total;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto r = rt.generator->extract({line, kg.edges(), &rt.schema, turn});
        auto rep = insert_triplets(kg, r.triplets);
        rep.rejected.insert(rep.rejected.end(), r.rejected.begin(), r.rejected.end());
        total += rep;
        for (const auto& rj : r.rejected)
          std::cerr << "turn " << turn << ": rejected (" << rj.raw.head << " | " << rj.raw.relation << " | "
                    << rj.raw.tail << "): " << to_string(rj.reason) << "\n";
        for (const auto& w : r.warnings) std::cerr << "turn " << turn << ": " << w << "\n";
        ++turn;
      }
      write_output(ex_out, export_kg_json(kg));
      std::cerr << total.inserted << " inserted, " << total.duplicates_skipped << " duplicates, "
                << total.rejected.size() << " rejected\n";
      return 0;
    }

    if (*synth) {
      std::vector<CaseRecord> cases;
      for (auto& c : synthetic::generate_cases(sy_n, sy_seed, rt.schema)) cases.push_back(std::move(c.record));
      write_dataset(sy_out, cases);
      std::cerr << "wrote " << cases.size() << " cases to " << sy_out << "\n";
      return 0;
    }

    if (*pretrain) {
      PretrainConfig pc;
      pc.lr = pe_lr;
      pc.max_epochs = pe_epochs;
      PretrainReport pr;
      const auto t0 = std::chrono::steady_clock::now();
      synthetic::CorpusOptions corpus;
      corpus.flat = pe_flat;
      ToyExpert expert = synthetic::pretrain_synthetic_expert(pe_n, pe_seed, &pr, pc, corpus);
      expert.save(pe_out);
      std::cerr << "pretrained in " << pr.epochs << " epochs, train accuracy " << pr.train_accuracy << ", "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
      std::cout << expert.digest() << "\n";
      return 0;
    }

    if (*train) {
      const Mode mode = parse_mode(tr_mode);
      rt.setup_generator(tr_extractor);
      ToyExpert expert = ToyExpert::load(tr_expert);
      auto cases = load_dataset(tr_data);
      std::vector<ProjectionExample> data;
      if (tr_augment) {
        std::vector<synthetic::SyntheticCase> syn;
        for (const auto& c : cases) syn.push_back({c, synthetic::extract_kg(c, rt.schema), 0, 0});
        data = synthetic::projection_corpus(syn, true, tr_cfg.seed);
      }
      for (const auto& c : tr_augment ? std::vector<CaseRecord>{} : cases) {
        DialogueState s = initial_state(c, *rt.generator, rt.schema);
        for (std::size_t i = 0; i < c.facts.size(); ++i)
          s = accumulate(std::move(s), "fact " + std::to_string(i + 1), PatientResponse{{c.facts[i]}}, *rt.generator,
                         rt.schema);
        data.push_back({s.kg, mcq_prompt(c.initial_info, c.mcq), c.mcq, {}});
      }
      HashEmbeddingProvider provider(tr_cfg.hidden);
      const auto t0 = std::chrono::steady_clock::now();
      auto result = train_projection(data, expert, provider, mode, tr_cfg);
      result.model.save(tr_out);
      std::cerr << "loss";
      for (double l : result.loss_curve) std::cerr << " " << l;
      std::cerr << "\ntrained in " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                << " s; expert digest " << result.expert_digest_before
                << (result.expert_digest_before == result.expert_digest_after ? " unchanged" : " CHANGED") << "\n";
      return 0;
    }

    if (*consult) {
      rt.cfg.mode = parse_mode(co_mode);
      if (co_max_turns > 0) rt.cfg.dialogue.max_turns = co_max_turns;
      rt.cfg.validate();
      rt.setup_patient(co_patient);
      rt.setup_generator(co_extractor);
      auto backends = rt.setup_expert(co_expert_kind, co_expert, co_projection, 64);
      auto cases = load_cases(co_data, co_synthetic, rt.cfg.seed);
      auto it = std::find_if(cases.begin(), cases.end(), [&](const CaseRecord& c) { return c.id == co_case; });
      if (it == cases.end()) throw ConfigError("no case with id '" + co_case + "'");
      ModelExpert expert(rt.cfg.mode, backends, rt.cfg.dialogue.confidence_threshold, load_questions(co_questions),
                         rt.cfg.seed);
      auto r = run_consultation(*it, {expert, *rt.patient, *rt.generator, rt.schema}, rt.cfg.dialogue);
      std::cout << "initial information: " << it->initial_info << "\n" << transcript_text(r);
      std::cout << "answer: " << r.final_choice << " (" << (r.correct ? "correct" : "incorrect") << "), turns "
                << r.turns_used << ", status " << to_string(r.status) << "\n";
      std::cout << serialize_kg_text(r.final_kg);
      if (r.aborted()) {
        std::cerr << "aborted: " << r.error << "\n";
        return 2;
      }
      return 0;
    }

    if (*eval) {
      rt.cfg.mode = parse_mode(ev_mode);
      if (ev_max_turns > 0) rt.cfg.dialogue.max_turns = ev_max_turns;
      if (ev_threshold > 0) rt.cfg.dialogue.confidence_threshold = ev_threshold;
      if (ev_workers > 0) rt.cfg.workers = ev_workers;
      rt.cfg.validate();
      rt.setup_patient(ev_patient);
      rt.setup_generator(ev_extractor);
      auto backends = rt.setup_expert(ev_expert_kind, ev_expert, ev_projection, 64);
      auto cases = load_cases(ev_data, ev_synthetic, rt.cfg.seed);
      EvalConfig ec;
      ec.mode = rt.cfg.mode;
      ec.dialogue = rt.cfg.dialogue;
      ec.seeds = parse_seeds(ev_seeds);
      ec.workers = rt.cfg.workers;
      ec.backend_tag = ev_expert_kind + (rt.toy ? ":" + rt.toy->digest() : "") +
                       (rt.projection ? ":" + Fnv1a{}.update(rt.projection->to_json_text()).hex() : "");
      const double threshold = rt.cfg.dialogue.confidence_threshold;
      const auto questions = load_questions(ev_questions);
      EvalPolicies policies{[&](std::uint64_t seed) -> std::unique_ptr<ExpertPolicy> {
                              return std::make_unique<ModelExpert>(ec.mode, backends, threshold, questions, seed);
                            },
                            *rt.patient, *rt.generator, rt.schema};
      auto rep = evaluate(cases, policies, ec);
      std::string format = ev_format;
      if (format.empty()) {
        auto ext = ev_report.substr(ev_report.find_last_of('.') + 1);
        format = (ext == "md" || ext == "csv") ? ext : "json";
      }
      emit_report(rep, format, ev_report);
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
      std::cerr << "accuracy " << rep.accuracy_mean << " +- " << rep.accuracy_std << " over " << rep.seeds.size()
                << " seed(s), report written to " << ev_report << "\n";
      return 0;
    }

    if (*report) {
      write_output(rp_out, render_report(report_from_json_text(read_file(rp_in)), rp_format));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
