#include "preemptkit/pipeline.hpp"

int main(int argc, char** argv) { return pk::pipeline::main(argc, argv); }
