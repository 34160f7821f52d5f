use resfu::alloc_counter::CountingAllocator;

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator::new();

fn main() {
    std::process::exit(resfu::cli::run(std::env::args_os()));
}
