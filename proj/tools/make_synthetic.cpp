// Writes the bundled synthetic data set to the given directory
// (default data/synthetic).

#include <filesystem>
#include <iostream>
#include <string>

#include "flowuq/io.hpp"
#include "flowuq/synthetic.hpp"

namespace fs = std::filesystem;
using namespace flowuq;

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? argv[1] : "data/synthetic";
  try {
    synthetic::GravityWorldOptions wo;
    wo.n = 10;
    wo.epsilon = 5.0;
    wo.rho = 1.0;
    wo.log_sd = 0.5;
    wo.seed = 20240101;
    const synthetic::GravityWorld w = synthetic::gravity_world(wo);
    io::write_text(dir / "flows.csv", io::flows_csv(w.flows));
    io::write_text(dir / "distances.csv", io::distances_csv(w.distances, w.flows.labels()));

    std::string costs = "origin,destination,cost\n";
    for (Eigen::Index i = 0; i < w.flows.size(); ++i)
      for (Eigen::Index j = 0; j < w.flows.size(); ++j)
        if (i != j)
          costs += w.flows.labels()[static_cast<std::size_t>(i)] + "," + w.flows.labels()[static_cast<std::size_t>(j)] +
                   "," + io::detail::fmt(std::exp(w.log_costs(i, j))) + "\n";
    io::write_text(dir / "costs.csv", costs);

    synthetic::MirrorPanelOptions mo;
    mo.world = wo;
    mo.world.n = 12;
    mo.periods = 8;
    mo.p = 0.1;
    mo.b = 0.05;
    mo.s2 = 0.2;
    mo.sigma2 = 0.05;
    mo.one_sided_dyads = 3;
    mo.seed = 20240102;
    const synthetic::SyntheticPanel sp = synthetic::mirror_panel(mo);
    io::write_text(dir / "mirror.csv", io::mirror_csv(sp.panel));
    io::write_text(dir / "mirror_distances.csv", io::distances_csv(sp.distances, sp.panel.labels));
  } catch (const std::exception& e) {
    std::cerr << "make_synthetic: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
