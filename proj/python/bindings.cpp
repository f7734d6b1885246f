// Python bindings for the car_rec package.

#include <sstream>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "car/cooc.hpp"
#include "car/corpus.hpp"
#include "car/evaluation.hpp"
#include "car/model.hpp"
#include "car/synthetic.hpp"
#include "car/training.hpp"

namespace py = pybind11;
using namespace car;

namespace {

Corpus parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_interactions(in);
}

std::string to_text(const Corpus& c) {
  std::ostringstream out;
  write_interactions(c, out);
  return out.str();
}

EvalOptions eval_options(std::size_t negatives, std::vector<std::size_t> cutoffs,
                         std::uint64_t seed, std::size_t threads) {
  EvalOptions o;
  o.negatives = negatives;
  o.cutoffs = std::move(cutoffs);
  o.seed = seed;
  o.threads = threads;
  return o;
}

std::vector<std::vector<ItemIndex>> item_lists(const Corpus& c) {
  std::vector<std::vector<ItemIndex>> out;
  out.reserve(c.lists.size());
  for (const auto& l : c.lists) out.push_back(l.items);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Consistency-aware attention recommender for ordered item lists.";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

  // Corpus -------------------------------------------------------------------
  py::class_<ItemList>(m, "ItemList")
      .def_readonly("id", &ItemList::id)
      .def_readonly("owner", &ItemList::owner)
      .def_readonly("items", &ItemList::items);

  py::class_<CorpusStats>(m, "CorpusStats")
      .def_readonly("users", &CorpusStats::users)
      .def_readonly("lists", &CorpusStats::lists)
      .def_readonly("items", &CorpusStats::items)
      .def_readonly("interactions", &CorpusStats::interactions)
      .def_readonly("lists_per_user", &CorpusStats::lists_per_user)
      .def_readonly("items_per_list", &CorpusStats::items_per_list)
      .def_readonly("density", &CorpusStats::density)
      .def("__str__", &stats_report);

  py::class_<Corpus>(m, "Corpus")
      .def_static("from_text", &parse_text, py::arg("text"))
      .def_static("load", &parse_interactions_file, py::arg("path"))
      .def("save", [](const Corpus& c, const std::string& path) { write_interactions_file(c, path); },
           py::arg("path"))
      .def("to_text", &to_text)
      .def_readonly("user_names", &Corpus::user_names)
      .def_readonly("item_names", &Corpus::item_names)
      .def_readonly("lists", &Corpus::lists)
      .def_property_readonly("num_users", &Corpus::num_users)
      .def_property_readonly("num_items", &Corpus::num_items)
      .def_property_readonly("num_interactions", &Corpus::num_interactions)
      .def("filter", &filter_corpus, py::arg("min_item_count") = 5, py::arg("min_list_len") = 5)
      .def("truncate", &truncate_lists, py::arg("max_len") = 1000)
      .def("stats", &corpus_stats)
      .def("split", &split_corpus)
      .def("__eq__", [](const Corpus& a, const Corpus& b) { return a == b; })
      .def("__len__", [](const Corpus& c) { return c.lists.size(); });

  py::class_<ListSplit>(m, "ListSplit")
      .def_readonly("id", &ListSplit::id)
      .def_readonly("owner", &ListSplit::owner)
      .def_readonly("train", &ListSplit::train)
      .def_readonly("validation", &ListSplit::validation)
      .def_readonly("test", &ListSplit::test)
      .def("test_input", &ListSplit::test_input);

  py::class_<SplitCorpus>(m, "SplitCorpus")
      .def_readonly("num_items", &SplitCorpus::num_items)
      .def_readonly("num_users", &SplitCorpus::num_users)
      .def_readonly("lists", &SplitCorpus::lists)
      .def_property_readonly("num_training_instances", &SplitCorpus::num_training_instances);

  // Synthetic data -----------------------------------------------------------
  py::class_<SyntheticCorpus>(m, "SyntheticCorpus")
      .def_readonly("corpus", &SyntheticCorpus::corpus)
      .def_readonly("drift", &SyntheticCorpus::drift)
      .def_readonly("cluster", &SyntheticCorpus::cluster)
      .def_readonly("drift_cluster", &SyntheticCorpus::drift_cluster);

  m.def(
      "synthesize",
      [](std::size_t clusters, std::size_t items_per_cluster, std::size_t lists,
         std::size_t min_len, std::size_t max_len, double drift, std::size_t segment,
         std::size_t lists_per_user, std::uint64_t seed) {
        SyntheticSpec s{clusters, items_per_cluster, lists, min_len, max_len,
                        drift,    segment,           lists_per_user, seed};
        return generate_synthetic(s);
      },
      py::arg("clusters") = 10, py::arg("items_per_cluster") = 100, py::arg("lists") = 2000,
      py::arg("min_len") = 20, py::arg("max_len") = 40, py::arg("drift") = 0.5,
      py::arg("segment") = 5, py::arg("lists_per_user") = 5, py::arg("seed") = 1);

  // Model --------------------------------------------------------------------
  py::class_<ForwardTrace>(m, "ForwardTrace")
      .def_readonly("gupm_weights", &ForwardTrace::gupm_weights)
      .def_readonly("cppm_weights", &ForwardTrace::cppm_weights)
      .def_readonly("gate_list_weights", &ForwardTrace::gate_list_weights)
      .def_readonly("gate", &ForwardTrace::gate)
      .def_readonly("gupm", &ForwardTrace::gupm)
      .def_readonly("cppm", &ForwardTrace::cppm)
      .def_readonly("z_consistency", &ForwardTrace::z_consistency)
      .def_readonly("z_list", &ForwardTrace::z_list)
      .def_readonly("head", &ForwardTrace::head);

  py::class_<ModelParams>(m, "Model")
      .def_static(
          "init",
          [](std::size_t dim, std::size_t num_items, std::size_t num_users, std::size_t max_len,
             bool user_embedding, const std::string& variant, std::uint64_t seed) {
            return init_params({dim, num_items, num_users, max_len, user_embedding,
                                parse_variant(variant)},
                               seed);
          },
          py::arg("dim"), py::arg("num_items"), py::arg("num_users"), py::arg("max_len"),
          py::arg("user_embedding") = false, py::arg("variant") = "car", py::arg("seed") = 1)
      .def_static("load", &load_checkpoint_file, py::arg("path"))
      .def("save", [](const ModelParams& p, const std::string& path) { save_checkpoint_file(p, path); },
           py::arg("path"))
      .def_readonly("dim", &ModelParams::dim)
      .def_readonly("num_items", &ModelParams::num_items)
      .def_readonly("num_users", &ModelParams::num_users)
      .def_readonly("max_len", &ModelParams::max_len)
      .def_readonly("use_user_embedding", &ModelParams::use_user_embedding)
      .def_property_readonly("variant",
                             [](const ModelParams& p) { return std::string(variant_name(p.variant)); })
      .def_property_readonly("parameter_count", &ModelParams::parameter_count)
      .def("tensors",
           [](const ModelParams& p) {
             py::dict out;
             for_each_tensor(p, [&](std::string_view name, const auto& t) {
               out[py::str(std::string(name))] = t;
             });
             return out;
           })
      .def(
          "forward",
          [](const ModelParams& p, const std::vector<ItemIndex>& prefix, UserIndex user,
             const std::vector<ItemIndex>& candidates) { return forward(prefix, user, candidates, p); },
          py::arg("prefix"), py::arg("user"), py::arg("candidates"))
      .def(
          "trace",
          [](const ModelParams& p, const std::vector<ItemIndex>& prefix, UserIndex user) {
            ForwardTrace t;
            const ItemIndex any = 1;
            forward(prefix, user, std::span<const ItemIndex>(&any, 1), p, &t);
            return t;
          },
          py::arg("prefix"), py::arg("user") = 0)
      .def(
          "pair_loss",
          [](const ModelParams& p, const std::vector<ItemIndex>& prefix, UserIndex user,
             ItemIndex positive, ItemIndex negative) {
            return pair_loss(prefix, user, positive, negative, p);
          },
          py::arg("prefix"), py::arg("user"), py::arg("positive"), py::arg("negative"));

  m.def("cosine", [](const std::vector<double>& a, const std::vector<double>& b) {
    return cosine(a, b);
  });

  // Training -----------------------------------------------------------------
  py::class_<EpochLog>(m, "EpochLog")
      .def_readonly("epoch", &EpochLog::epoch)
      .def_readonly("train_loss", &EpochLog::train_loss)
      .def_readonly("val_ndcg5", &EpochLog::val_ndcg5)
      .def_readonly("val_hr5", &EpochLog::val_hr5)
      .def_readonly("seconds", &EpochLog::seconds);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("model", &FitResult::params)
      .def_readonly("best_epoch", &FitResult::best_epoch)
      .def_readonly("log", &FitResult::log);

  m.def(
      "fit",
      [](const SplitCorpus& split, std::size_t dim, std::size_t max_len, std::size_t batch_size,
         double learning_rate, std::size_t patience, std::size_t max_epochs, bool user_embedding,
         const std::string& variant, std::size_t negatives, std::uint64_t seed,
         std::size_t threads) {
        TrainConfig c;
        c.dim = dim;
        c.max_len = max_len;
        c.batch_size = batch_size;
        c.learning_rate = learning_rate;
        c.patience = patience;
        c.max_epochs = max_epochs;
        c.use_user_embedding = user_embedding;
        c.variant = parse_variant(variant);
        c.seed = seed;
        c.threads = threads;
        c.validate();
        py::gil_scoped_release release;
        return fit(split, c, validation_hook(split, negatives, seed, threads));
      },
      py::arg("split"), py::arg("dim") = 50, py::arg("max_len") = 500, py::arg("batch_size") = 128,
      py::arg("learning_rate") = 0.001, py::arg("patience") = 10, py::arg("max_epochs") = 100,
      py::arg("user_embedding") = false, py::arg("variant") = "car", py::arg("negatives") = 100,
      py::arg("seed") = 1, py::arg("threads") = 1);

  // Evaluation ---------------------------------------------------------------
  py::class_<ListOutcome>(m, "ListOutcome")
      .def_readonly("list_id", &ListOutcome::list_id)
      .def_readonly("rank", &ListOutcome::rank);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("cutoffs", &EvalReport::cutoffs)
      .def_readonly("hit_rate", &EvalReport::hit_rate)
      .def_readonly("ndcg", &EvalReport::ndcg)
      .def_readonly("lists", &EvalReport::lists)
      .def("hr", &EvalReport::mean_hr, py::arg("k"))
      .def("ndcg_at", &EvalReport::mean_ndcg, py::arg("k"));

  m.def(
      "evaluate",
      [](const ModelParams& p, const SplitCorpus& split, std::size_t negatives,
         std::vector<std::size_t> cutoffs, std::uint64_t seed, std::size_t threads) {
        const auto o = eval_options(negatives, std::move(cutoffs), seed, threads);
        py::gil_scoped_release release;
        return evaluate(p, split, o);
      },
      py::arg("model"), py::arg("split"), py::arg("negatives") = 100,
      py::arg("cutoffs") = std::vector<std::size_t>{5, 10}, py::arg("seed") = 1,
      py::arg("threads") = 1);

  m.def("rank_of_target", [](const std::vector<double>& scores, std::size_t target) {
    return rank_of_target(scores, target);
  });
  m.def("hr_at_k", &hr_at_k, py::arg("rank"), py::arg("k"));
  m.def("ndcg_at_k", &ndcg_at_k, py::arg("rank"), py::arg("k"));

  // Co-occurrence consistency ------------------------------------------------
  py::class_<CoocEmbeddings>(m, "CoocEmbeddings")
      .def_readonly("dim", &CoocEmbeddings::dim)
      .def("vector", [](const CoocEmbeddings& e, ItemIndex i) {
        if (i >= e.rows()) throw py::index_error("item out of range");
        const auto r = e.row(i);
        return std::vector<double>(r.begin(), r.end());
      });

  m.def(
      "train_embeddings",
      [](const Corpus& c, std::size_t dim, std::size_t window, std::size_t negatives,
         std::size_t epochs, double learning_rate, std::uint64_t seed) {
        const SkipGramConfig cfg{dim, window, negatives, epochs, learning_rate, seed};
        const auto lists = item_lists(c);
        py::gil_scoped_release release;
        return train_cooc_embeddings(lists, c.num_items(), cfg);
      },
      py::arg("corpus"), py::arg("dim") = 50, py::arg("window") = 5, py::arg("negatives") = 5,
      py::arg("epochs") = 5, py::arg("learning_rate") = 0.025, py::arg("seed") = 1);

  m.def(
      "consistency",
      [](const std::vector<ItemIndex>& list, const CoocEmbeddings& e) {
        return consistency_score(list, e);
      },
      py::arg("items"), py::arg("embeddings"));

  m.def(
      "winner_analysis",
      [](const EvalReport& gupm, const EvalReport& cppm, const py::dict& consistency) {
        std::vector<ConsistencyRecord> records;
        for (const auto& [k, v] : consistency) {
          records.push_back({k.cast<std::string>(), v.cast<double>()});
        }
        const auto a = winner_consistency_analysis(gupm.lists, cppm.lists, records);
        py::dict out;
        for (const auto& g : a.groups) {
          py::dict row;
          row["lists"] = g.lists;
          row["gupm_ndcg5"] = g.gupm_ndcg5;
          row["cppm_ndcg5"] = g.cppm_ndcg5;
          row["consistency"] = g.consistency;
          out[py::str(g.name)] = row;
        }
        return out;
      },
      py::arg("gupm"), py::arg("cppm"), py::arg("consistency"));
}
