// Generates the bundled template shapes (icosphere, hinged cylinder chains)
// together with their hard part labels, for feeding the synth pipeline.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <string>

#include "dp3d/error.hpp"
#include "dp3d/mesh.hpp"
#include "dp3d/primitives.hpp"

#include <nlohmann/json.hpp>

int main(int argc, char** argv) {
  CLI::App app{"dp3d-make-template: generate template meshes with part labels"};
  std::string shape = "cylinder";
  std::string out_mesh = "template.obj";
  std::string out_labels;
  int parts = 2;
  int around = 20;
  int rings = 29;
  double radius = 0.25;
  double height = 2.0;
  int subdivisions = 3;
  app.add_option("--shape", shape, "icosphere | cylinder")->check(CLI::IsMember({"icosphere", "cylinder"}));
  app.add_option("--out", out_mesh, "output mesh path (.obj)");
  app.add_option("--labels", out_labels, "output labels path (.json); cylinder only");
  app.add_option("--parts", parts, "number of label bands along the cylinder");
  app.add_option("--around", around, "cylinder vertices per ring");
  app.add_option("--rings", rings, "cylinder rings");
  app.add_option("--radius", radius, "cylinder radius");
  app.add_option("--height", height, "cylinder height");
  app.add_option("--subdivisions", subdivisions, "icosphere subdivision rounds");
  CLI11_PARSE(app, argc, argv);

  try {
    if (shape == "icosphere") {
      dp3d::export_mesh(dp3d::make_icosphere(subdivisions), nullptr, out_mesh);
    } else {
      const dp3d::LabeledMesh lm = dp3d::make_cylinder_chain(around, rings, parts, radius, height);
      dp3d::export_mesh(lm.mesh, nullptr, out_mesh);
      if (!out_labels.empty()) {
        nlohmann::json j;
        j["labels"] = lm.labels;
        auto& hz = j["hinge_z"] = nlohmann::json::array();
        for (double z : lm.hinge_z) hz.push_back(z);
        std::ofstream out(out_labels);
        out << j.dump(2) << "\n";
      }
    }
  } catch (const dp3d::Error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
    return 1;
  }
  std::cout << "wrote " << out_mesh << "\n";
  return 0;
}
